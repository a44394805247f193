//! Binary object format.
//!
//! ```text
//! "MLE1" | tag u8 | version u8 | n u32le | k u8 | k x modulus u64le | t u64le | payload
//! ```
//!
//! Ring polynomials are written modulus-major: for each modulus, n
//! residues as u64le. A plaintext is a single vector of n coefficients
//! over Z_t. Ciphertexts and public keys carry two polynomials, secret
//! keys one, parameter objects none.

use std::sync::Arc;

use super::{Ciphertext, EncryptionParams, HeError, KeyPair, PlainPoly, PublicKey, SecretKey};
use crate::ring::{RingParams, RingPoly};

pub const MAGIC: &[u8; 4] = b"MLE1";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ObjectTag {
    Params = 0x01,
    Plaintext = 0x02,
    Ciphertext = 0x03,
    PublicKey = 0x04,
    SecretKey = 0x05,
}

impl ObjectTag {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::Params,
            0x02 => Self::Plaintext,
            0x03 => Self::Ciphertext,
            0x04 => Self::PublicKey,
            0x05 => Self::SecretKey,
            _ => return None,
        })
    }

    fn poly_count(self) -> usize {
        match self {
            Self::Params | Self::Plaintext => 0,
            Self::SecretKey => 1,
            Self::Ciphertext | Self::PublicKey => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectHeader {
    pub tag: ObjectTag,
    pub version: u8,
    pub degree: usize,
    pub moduli: Vec<u64>,
    pub plain_modulus: u64,
}

impl ObjectHeader {
    fn len(&self) -> usize {
        4 + 1 + 1 + 4 + 1 + 8 * self.moduli.len() + 8
    }

    fn matches(&self, params: &EncryptionParams) -> bool {
        self.degree == params.degree()
            && self.moduli == params.ring().moduli()
            && self.plain_modulus == params.plain_modulus()
    }

    /// Rebuilds parameters from the header. Degrees outside the production
    /// range are accepted so small test rings also roundtrip.
    pub fn params(&self) -> Result<Arc<EncryptionParams>, HeError> {
        let ring = RingParams::new_toy(self.degree, &self.moduli)?;
        EncryptionParams::new(ring, self.plain_modulus)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], HeError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| HeError::Malformed("truncated input".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, HeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, HeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, HeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and validates the common header of any serialized object.
pub fn read_header(bytes: &[u8]) -> Result<ObjectHeader, HeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(HeError::Malformed("bad magic".into()));
    }
    let tag_byte = r.u8()?;
    let tag = ObjectTag::from_byte(tag_byte)
        .ok_or_else(|| HeError::Malformed(format!("unknown object tag {tag_byte:#04x}")))?;
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(HeError::Malformed(format!("unsupported version {version}")));
    }
    let degree = r.u32()? as usize;
    let count = r.u8()? as usize;
    let moduli = (0..count).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let plain_modulus = r.u64()?;
    let header = ObjectHeader {
        tag,
        version,
        degree,
        moduli,
        plain_modulus,
    };
    let payload_words = match tag {
        ObjectTag::Plaintext => degree,
        other => other.poly_count() * degree * count,
    };
    let expected = payload_words
        .checked_mul(8)
        .and_then(|p| p.checked_add(header.len()))
        .ok_or_else(|| HeError::Malformed("length overflow".into()))?;
    if bytes.len() != expected {
        return Err(HeError::Malformed(format!(
            "expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(header)
}

fn write_header(out: &mut Vec<u8>, tag: ObjectTag, params: &EncryptionParams) {
    let moduli = params.ring().moduli();
    out.extend_from_slice(MAGIC);
    out.push(tag as u8);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(params.degree() as u32).to_le_bytes());
    out.push(moduli.len() as u8);
    for q in &moduli {
        out.extend_from_slice(&q.to_le_bytes());
    }
    out.extend_from_slice(&params.plain_modulus().to_le_bytes());
}

fn write_words(out: &mut Vec<u8>, words: &[u64]) {
    out.reserve(words.len() * 8);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

fn encode(tag: ObjectTag, params: &EncryptionParams, polys: &[&[u64]]) -> Vec<u8> {
    let words: usize = polys.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(64 + 8 * words);
    write_header(&mut out, tag, params);
    for p in polys {
        write_words(&mut out, p);
    }
    out
}

/// Parses a payload against known parameters, checking tag and header.
fn decode_payload(
    bytes: &[u8],
    tag: ObjectTag,
    params: &EncryptionParams,
) -> Result<Vec<Vec<u64>>, HeError> {
    let header = read_header(bytes)?;
    if header.tag != tag {
        return Err(HeError::Malformed(format!(
            "expected object tag {:#04x}, found {:#04x}",
            tag as u8, header.tag as u8
        )));
    }
    if !header.matches(params) {
        return Err(HeError::ParamsMismatch(
            params.param_set_id().to_string(),
            format!("n={} t={}", header.degree, header.plain_modulus),
        ));
    }
    let body = &bytes[header.len()..];
    let words: Vec<u64> = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let per_poly = match tag {
        ObjectTag::Plaintext => header.degree,
        _ => header.degree * header.moduli.len(),
    };
    if per_poly == 0 {
        return Ok(Vec::new());
    }
    Ok(words.chunks_exact(per_poly).map(<[u64]>::to_vec).collect())
}

fn ring_poly(params: &EncryptionParams, words: Vec<u64>) -> Result<RingPoly, HeError> {
    Ok(RingPoly::from_residues(params.ring(), words)?)
}

impl EncryptionParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(ObjectTag::Params, self, &[])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Arc<Self>, HeError> {
        let header = read_header(bytes)?;
        if header.tag != ObjectTag::Params {
            return Err(HeError::Malformed("not a parameter object".into()));
        }
        header.params()
    }
}

impl PlainPoly {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(ObjectTag::Plaintext, &self.params, &[&self.coeffs])
    }

    pub fn from_bytes(bytes: &[u8], params: &Arc<EncryptionParams>) -> Result<Self, HeError> {
        let mut polys = decode_payload(bytes, ObjectTag::Plaintext, params)?;
        PlainPoly::new(params, &polys.remove(0))
    }
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(
            ObjectTag::Ciphertext,
            &self.params,
            &[self.c0.raw(), self.c1.raw()],
        )
    }

    pub fn from_bytes(bytes: &[u8], params: &Arc<EncryptionParams>) -> Result<Self, HeError> {
        let mut polys = decode_payload(bytes, ObjectTag::Ciphertext, params)?.into_iter();
        let c0 = ring_poly(params, polys.next().unwrap())?;
        let c1 = ring_poly(params, polys.next().unwrap())?;
        Ok(Ciphertext {
            params: params.clone(),
            c0,
            c1,
        })
    }
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(
            ObjectTag::PublicKey,
            &self.params,
            &[self.p0.raw(), self.p1.raw()],
        )
    }

    pub fn from_bytes(bytes: &[u8], params: &Arc<EncryptionParams>) -> Result<Self, HeError> {
        let mut polys = decode_payload(bytes, ObjectTag::PublicKey, params)?.into_iter();
        let p0 = ring_poly(params, polys.next().unwrap())?;
        let p1 = ring_poly(params, polys.next().unwrap())?;
        Ok(PublicKey::from_polys(params, p0, p1))
    }

    /// Reads a key file whose header defines the parameters.
    pub fn from_bytes_self_described(bytes: &[u8]) -> Result<Self, HeError> {
        let params = read_header(bytes)?.params()?;
        Self::from_bytes(bytes, &params)
    }
}

impl SecretKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(ObjectTag::SecretKey, &self.params, &[self.s.raw()])
    }

    pub fn from_bytes(bytes: &[u8], params: &Arc<EncryptionParams>) -> Result<Self, HeError> {
        let mut polys = decode_payload(bytes, ObjectTag::SecretKey, params)?;
        let s = ring_poly(params, polys.remove(0))?;
        Ok(SecretKey::from_poly(params, s))
    }

    pub fn from_bytes_self_described(bytes: &[u8]) -> Result<Self, HeError> {
        let params = read_header(bytes)?.params()?;
        Self::from_bytes(bytes, &params)
    }
}

impl KeyPair {
    /// (secret key bytes, public key bytes).
    pub fn to_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        (self.secret.to_bytes(), self.public.to_bytes())
    }

    pub fn from_bytes(secret: &[u8], public: &[u8]) -> Result<Self, HeError> {
        let secret = SecretKey::from_bytes_self_described(secret)?;
        let public = PublicKey::from_bytes(public, secret.params())?;
        Ok(Self { secret, public })
    }
}
