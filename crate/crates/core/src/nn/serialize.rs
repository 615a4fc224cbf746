//! Binary serialization for encoder weights.
//!
//! Layout: magic bytes, a length-prefixed architecture descriptor text
//! block, then raw little-endian f64 arrays in descriptor order. Round trips
//! are byte-identical.

use super::encoder::{ArchDescriptor, EncoderParams};
use crate::error::{Error, Result};

pub const ENCODER_MAGIC: &[u8; 8] = b"ENCW0001";

pub fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_f64_slice(out: &mut Vec<u8>, values: &[f64]) {
    write_u64(out, values.len() as u64);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_text_block(out: &mut Vec<u8>, text: &str) {
    write_u32(out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
}

/// Byte-stream reader with explicit error context.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::data(format!("checkpoint truncated while reading {what}")));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let found = self.take(magic.len(), "magic bytes")?;
        if found != magic {
            return Err(Error::data(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(found)
            )));
        }
        Ok(())
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let bytes = self.take(4, what)?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    pub fn read_u64(&mut self, what: &str) -> Result<u64> {
        let bytes = self.take(8, what)?;
        Ok(u64::from_le_bytes(bytes.try_into().unwrap()))
    }

    pub fn read_f64_slice(&mut self, what: &str) -> Result<Vec<f64>> {
        let len = self.read_u64(what)? as usize;
        let bytes = self.take(len * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_text_block(&mut self, what: &str) -> Result<String> {
        let len = self.read_u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::data(format!("{what} is not valid utf-8")))
    }

    pub fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Append the parameter arrays of an encoder (descriptor order).
pub fn write_params(out: &mut Vec<u8>, params: &EncoderParams) {
    for slice in params.param_slices() {
        write_f64_slice(out, slice);
    }
}

/// Read parameter arrays for `arch`, validating group sizes.
pub fn read_params(reader: &mut Reader<'_>, arch: &ArchDescriptor) -> Result<EncoderParams> {
    let mut params = EncoderParams::init(arch, 0)?;
    let groups = params.group_sizes();
    let mut slices = params.param_slices_mut();
    for (i, slice) in slices.iter_mut().enumerate() {
        let values = reader.read_f64_slice(&format!("parameter group {i}"))?;
        if values.len() != groups[i] {
            return Err(Error::data(format!(
                "parameter group {i} has {} values, expected {}",
                values.len(),
                groups[i]
            )));
        }
        slice.copy_from_slice(&values);
    }
    Ok(params)
}

/// Standalone encoder checkpoint.
pub fn encode_encoder(params: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ENCODER_MAGIC);
    write_text_block(&mut out, &params.arch.to_text());
    write_params(&mut out, params);
    out
}

pub fn decode_encoder(bytes: &[u8]) -> Result<EncoderParams> {
    let mut reader = Reader::new(bytes);
    reader.expect_magic(ENCODER_MAGIC)?;
    let arch = ArchDescriptor::parse(&reader.read_text_block("architecture descriptor")?)?;
    read_params(&mut reader, &arch)
}
