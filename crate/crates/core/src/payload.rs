//! The two QR payloads printed next to a label.
//!
//! **Payload A** carries the reference cloud as decimal digits only, so it
//! can be encoded in QR numeric mode (three digits per 10-bit group):
//!
//! ```text
//! header  : CCCC K            point count (4 digits), kind flag (0 beads, 1 rods)
//! record  : XXXXXX YYYYYY ZZZZZ xx yy zz    one per point, 23 digits
//! ```
//!
//! Coordinates are zero-padded nanometres (6, 6 and 5 digits), followed by
//! the two-digit error radius per axis.
//!
//! **Payload B** carries the product information and the signature as raw
//! bytes for QR byte mode (ISO/IEC 8859-1):
//!
//! ```text
//! u16 big-endian length L | L bytes Latin-1 product info | DER ECDSA signature (70..=72 bytes)
//! ```

use crate::error::{Error, Result};
use crate::label::{ErrorRadii, LabelKind, Point3, PointCloud};

pub const HEADER_DIGITS: usize = 5;
pub const COORDINATE_DIGITS: usize = 17;
pub const RADIUS_DIGITS: usize = 6;
pub const RECORD_DIGITS: usize = COORDINATE_DIGITS + RADIUS_DIGITS;
pub const MAX_POINTS: usize = 9999;

pub const MAX_INFO_CHARS: usize = 900;
pub const SIGNATURE_LEN: std::ops::RangeInclusive<usize> = 70..=72;

const COORD_WIDTHS: [usize; 3] = [6, 6, 5];

/// Numeric-mode payload holding a reference cloud.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PayloadA {
    digits: String,
    point_count: usize,
}

impl PayloadA {
    /// Validates a digit string read from a QR code.
    pub fn parse(digits: &str) -> Result<Self> {
        decode_payload_a_str(digits)?;
        Ok(Self {
            digits: digits.to_owned(),
            point_count: digits[..4].parse().expect("validated digits"),
        })
    }

    pub fn digits(&self) -> &str {
        &self.digits
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    /// Digits after the header.
    pub fn body(&self) -> &str {
        &self.digits[HEADER_DIGITS..]
    }

    /// Length of the QR numeric-mode data bits (excluding mode and count
    /// indicators): 10 bits per three digits, 7 or 4 for a remainder.
    pub fn numeric_mode_bits(&self) -> usize {
        let n = self.digits.len();
        10 * (n / 3)
            + match n % 3 {
                0 => 0,
                1 => 4,
                _ => 7,
            }
    }
}

/// Byte-mode payload with product information and signature.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PayloadB {
    product_info: String,
    signature: Vec<u8>,
}

impl PayloadB {
    pub fn product_info(&self) -> &str {
        &self.product_info
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let info = latin1_bytes(&self.product_info).expect("validated on construction");
        let mut out = Vec::with_capacity(2 + info.len() + self.signature.len());
        out.extend_from_slice(&(info.len() as u16).to_be_bytes());
        out.extend_from_slice(&info);
        out.extend_from_slice(&self.signature);
        out
    }

    /// Product information length in characters.
    pub fn info_chars(&self) -> usize {
        self.product_info.chars().count()
    }
}

/// Encodes text as ISO/IEC 8859-1.
pub fn latin1_bytes(text: &str) -> Result<Vec<u8>> {
    text.chars()
        .enumerate()
        .map(|(position, ch)| {
            u8::try_from(u32::from(ch)).map_err(|_| Error::Encoding { ch, position })
        })
        .collect()
}

pub fn latin1_string(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

/// The 23-digit record of one point.
pub fn encode_point_record(point: Point3, radii: ErrorRadii) -> Result<String> {
    let mut out = String::with_capacity(RECORD_DIGITS);
    for (axis, (c, width)) in point.coords().into_iter().zip(COORD_WIDTHS).enumerate() {
        let max = 10i64.pow(width as u32) - 1;
        if !(0..=max).contains(&c) {
            return Err(Error::Range {
                what: ["x coordinate", "y coordinate", "z coordinate"][axis],
                value: c,
                min: 0,
                max,
            });
        }
        out.push_str(&format!("{c:0width$}"));
    }
    for r in radii.components() {
        out.push_str(&format!("{r:02}"));
    }
    Ok(out)
}

pub fn encode_payload_a(cloud: &PointCloud) -> Result<PayloadA> {
    cloud.check_reference()?;
    if cloud.len() > MAX_POINTS {
        return Err(Error::Range {
            what: "point count",
            value: cloud.len() as i64,
            min: 3,
            max: MAX_POINTS as i64,
        });
    }
    let mut digits = String::with_capacity(HEADER_DIGITS + RECORD_DIGITS * cloud.len());
    digits.push_str(&format!("{:04}", cloud.len()));
    digits.push(match cloud.kind() {
        LabelKind::Beads => '0',
        LabelKind::Rods => '1',
    });
    for (p, r) in cloud.points().iter().zip(cloud.radii()) {
        digits.push_str(&encode_point_record(*p, *r)?);
    }
    Ok(PayloadA {
        digits,
        point_count: cloud.len(),
    })
}

fn field(digits: &str, offset: usize, width: usize) -> u32 {
    digits[offset..offset + width].parse().expect("validated digits")
}

fn decode_payload_a_str(digits: &str) -> Result<PointCloud> {
    if let Some((offset, ch)) = digits.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        return Err(Error::Parse {
            offset,
            message: format!("{ch:?} is not a decimal digit"),
        });
    }
    if digits.len() < HEADER_DIGITS {
        return Err(Error::Length {
            expected: HEADER_DIGITS,
            actual: digits.len(),
        });
    }
    let count = field(digits, 0, 4) as usize;
    let kind = match &digits[4..5] {
        "0" => LabelKind::Beads,
        "1" => LabelKind::Rods,
        other => {
            return Err(Error::Parse {
                offset: 4,
                message: format!("unknown kind flag {other}"),
            })
        }
    };
    let expected = HEADER_DIGITS + RECORD_DIGITS * count;
    if digits.len() != expected {
        return Err(Error::Length {
            expected,
            actual: digits.len(),
        });
    }

    let mut points = Vec::with_capacity(count);
    let mut radii = Vec::with_capacity(count);
    for k in 0..count {
        let base = HEADER_DIGITS + k * RECORD_DIGITS;
        let x = field(digits, base, 6) as i64;
        let y = field(digits, base + 6, 6) as i64;
        let z = field(digits, base + 12, 5) as i64;
        let mut r = [0u32; 3];
        for (axis, slot) in r.iter_mut().enumerate() {
            let offset = base + COORDINATE_DIGITS + 2 * axis;
            *slot = field(digits, offset, 2);
            if *slot == 0 {
                return Err(Error::Parse {
                    offset,
                    message: "error radius 00 is not allowed".into(),
                });
            }
        }
        points.push(Point3::new(x, y, z));
        radii.push(ErrorRadii::new(r[0], r[1], r[2])?);
    }
    let cloud = PointCloud::new(kind, points, radii).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    cloud.check_reference().map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    Ok(cloud)
}

pub fn decode_payload_a(payload: &PayloadA) -> Result<PointCloud> {
    decode_payload_a_str(payload.digits())
}

fn check_signature_blob(signature: &[u8]) -> Result<()> {
    if !SIGNATURE_LEN.contains(&signature.len()) {
        return Err(Error::Length {
            expected: if signature.len() < *SIGNATURE_LEN.start() {
                *SIGNATURE_LEN.start()
            } else {
                *SIGNATURE_LEN.end()
            },
            actual: signature.len(),
        });
    }
    crate::signing::SignatureBlob::from_der(signature).map(|_| ())
}

pub fn encode_payload_b(product_info: &str, signature: &[u8]) -> Result<PayloadB> {
    let info = latin1_bytes(product_info)?;
    if info.is_empty() || info.len() > MAX_INFO_CHARS {
        return Err(Error::InvalidArgument(format!(
            "product info has {} characters, allowed 1..={MAX_INFO_CHARS}",
            info.len()
        )));
    }
    check_signature_blob(signature)?;
    Ok(PayloadB {
        product_info: product_info.to_owned(),
        signature: signature.to_vec(),
    })
}

pub fn decode_payload_b(bytes: &[u8]) -> Result<PayloadB> {
    if bytes.len() < 2 {
        return Err(Error::Length {
            expected: 2,
            actual: bytes.len(),
        });
    }
    let len = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
    if len == 0 || len > MAX_INFO_CHARS {
        return Err(Error::Parse {
            offset: 0,
            message: format!("product info length {len} outside 1..={MAX_INFO_CHARS}"),
        });
    }
    if bytes.len() < 2 + len + SIGNATURE_LEN.start() || bytes.len() > 2 + len + SIGNATURE_LEN.end() {
        return Err(Error::Length {
            expected: 2 + len + SIGNATURE_LEN.start(),
            actual: bytes.len(),
        });
    }
    let signature = &bytes[2 + len..];
    check_signature_blob(signature).map_err(|e| Error::Parse {
        offset: 2 + len,
        message: e.to_string(),
    })?;
    Ok(PayloadB {
        product_info: latin1_string(&bytes[2..2 + len]),
        signature: signature.to_vec(),
    })
}

/// Either payload, for print-size recommendations.
#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    A(&'a PayloadA),
    B(&'a PayloadB),
}

/// Recommended QR side length in centimetres, never below 1 cm.
pub fn recommended_print_side_cm(payload: Payload<'_>) -> f64 {
    let side = match payload {
        Payload::A(a) => a.point_count() as f64 / 60.0,
        Payload::B(b) => b.info_chars() as f64 / 500.0,
    };
    side.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::generate_reference;
    use crate::signing::{keygen, sign};

    fn r(x: u32, y: u32, z: u32) -> ErrorRadii {
        ErrorRadii::new(x, y, z).unwrap()
    }

    #[test]
    fn single_record_layout() {
        let rec = encode_point_record(Point3::new(1, 20, 300), r(10, 8, 8)).unwrap();
        assert_eq!(rec, "000001".to_owned() + "000020" + "00300" + "100808");
    }

    #[test]
    fn header_and_first_record() {
        let cloud = PointCloud::new(
            LabelKind::Beads,
            vec![Point3::new(1, 20, 300), Point3::new(999_999, 0, 99_999), Point3::new(5, 5, 5)],
            vec![r(10, 8, 8), r(99, 1, 1), r(1, 1, 1)],
        )
        .unwrap();
        let a = encode_payload_a(&cloud).unwrap();
        assert_eq!(&a.digits()[..5], "00030");
        assert_eq!(&a.body()[..23], "00000100002000300100808");
        assert_eq!(&a.body()[23..46], "99999900000099999990101");
        assert_eq!(decode_payload_a(&a).unwrap(), cloud);
    }

    #[test]
    fn body_length_is_23_per_point() {
        let cloud = generate_reference(LabelKind::Beads, 50, 1).unwrap();
        let a = encode_payload_a(&cloud).unwrap();
        assert_eq!(a.body().len(), 1150);
        assert_eq!(a.digits().len(), 1155);
        assert!(a.digits().bytes().all(|b| b.is_ascii_digit()));
    }

    #[test]
    fn out_of_box_coordinate_is_a_range_error() {
        let cloud = PointCloud::new(
            LabelKind::Beads,
            vec![Point3::new(0, 0, 100_000), Point3::new(1, 1, 1), Point3::new(2, 2, 2)],
            vec![r(1, 1, 1); 3],
        )
        .unwrap();
        assert!(matches!(encode_payload_a(&cloud), Err(Error::Range { value: 100_000, .. })));
        assert!(matches!(
            encode_point_record(Point3::new(-1, 0, 0), r(1, 1, 1)),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn too_few_points_cannot_form_a_cloud() {
        assert!(PointCloud::new(LabelKind::Beads, vec![], vec![]).is_err());
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let cloud = generate_reference(LabelKind::Beads, 10, 2).unwrap();
        let a = encode_payload_a(&cloud).unwrap();
        let cut = &a.digits()[..a.digits().len() - 4];
        assert_eq!(
            PayloadA::parse(cut),
            Err(Error::Length {
                expected: 5 + 230,
                actual: 231
            })
        );
    }

    #[test]
    fn letter_reports_offset() {
        let cloud = generate_reference(LabelKind::Rods, 10, 2).unwrap();
        let mut s = encode_payload_a(&cloud).unwrap().digits().to_owned();
        s.replace_range(37..38, "Q");
        match PayloadA::parse(&s) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 37),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn payload_b_framing() {
        let keys = keygen(Some(1)).unwrap();
        let a = encode_payload_a(&generate_reference(LabelKind::Beads, 20, 1).unwrap()).unwrap();
        let sig = loop {
            let s = sign(&a, "Acme Werk 7, Serie 0042", &keys).unwrap();
            if s.as_bytes().len() == 71 {
                break s;
            }
        };
        let b = encode_payload_b("Acme Werk 7, Serie 0042", sig.as_bytes()).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), 2 + 23 + 71);
        assert_eq!(&bytes[..2], &[0, 23]);
        assert_eq!(&bytes[2..25], b"Acme Werk 7, Serie 0042");
        assert_eq!(decode_payload_b(&bytes).unwrap(), b);
    }

    #[test]
    fn payload_b_rejects_non_latin1() {
        let keys = keygen(Some(2)).unwrap();
        let a = encode_payload_a(&generate_reference(LabelKind::Beads, 20, 1).unwrap()).unwrap();
        let sig = sign(&a, "x", &keys).unwrap();
        assert!(matches!(
            encode_payload_b("Größe 10 €", sig.as_bytes()),
            Err(Error::Encoding { ch: '€', position: 9 })
        ));
        assert!(encode_payload_b("Größe 10", sig.as_bytes()).is_ok());
        assert!(encode_payload_b("", sig.as_bytes()).is_err());
        assert!(encode_payload_b(&"x".repeat(901), sig.as_bytes()).is_err());
    }

    #[test]
    fn payload_b_rejects_bad_signature_blob() {
        assert!(encode_payload_b("info", &[0x30; 71]).is_err());
        assert!(encode_payload_b("info", &[0u8; 64]).is_err());
        assert!(decode_payload_b(&[0, 4, b'a', b'b', b'c', b'd']).is_err());
        assert!(decode_payload_b(&[0]).is_err());
    }

    #[test]
    fn print_sizes() {
        let a50 = encode_payload_a(&generate_reference(LabelKind::Beads, 50, 1).unwrap()).unwrap();
        let a120 = encode_payload_a(&generate_reference(LabelKind::Beads, 120, 1).unwrap()).unwrap();
        assert_eq!(recommended_print_side_cm(Payload::A(&a50)), 1.0);
        assert_eq!(recommended_print_side_cm(Payload::A(&a120)), 2.0);

        let keys = keygen(Some(3)).unwrap();
        let sig = sign(&a50, "x", &keys).unwrap();
        let b900 = encode_payload_b(&"z".repeat(900), sig.as_bytes()).unwrap();
        let b10 = encode_payload_b("short", sig.as_bytes()).unwrap();
        assert!((recommended_print_side_cm(Payload::B(&b900)) - 1.8).abs() < 1e-12);
        assert_eq!(recommended_print_side_cm(Payload::B(&b10)), 1.0);
    }

    #[test]
    fn numeric_mode_bit_count() {
        let a = encode_payload_a(&generate_reference(LabelKind::Beads, 50, 1).unwrap()).unwrap();
        // 1155 digits = 385 groups of three.
        assert_eq!(a.numeric_mode_bits(), 3850);
    }
}
