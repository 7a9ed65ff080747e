//! Authentication of nano-structured product labels.
//!
//! A label is a random 3D point cloud. The manufacturer stores the
//! reference cloud in a QR payload together with a signature; a verifier
//! re-measures the label, rigidly registers the two clouds with Coherent
//! Point Drift and counts mutually matching points.

pub mod bench;
pub mod cpd;
pub mod error;
pub mod label;
pub mod payload;
pub mod rng;
pub mod signing;
pub mod transform;
pub mod verify;

pub use cpd::{register, CpdConfig, Posterior, RegistrationResult, ScaleMode};
pub use error::{Error, Result};
pub use label::{
    generate_reference, synthesize_measurement, ErrorRadii, LabelKind, MeasurementSpec, Point3,
    PointCloud, SyntheticMeasurement,
};
pub use payload::{decode_payload_a, decode_payload_b, encode_payload_a, encode_payload_b, PayloadA, PayloadB};
pub use signing::{keygen, sign, verify_message, verify_signature, KeyPair, PublicKey, SignatureBlob};
pub use transform::RigidTransform;
pub use verify::{match_fraction, verify, Verdict, VerifyConfig};
