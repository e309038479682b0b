//! Little-endian binary containers for density maps (`DMAP`) and network
//! weights (`CNWT`).

use std::path::Path;

use crate::density::DensityMap;
use crate::error::{Error, Format, Result};
use crate::model::Network;
use crate::tensor::{ParamState, Shape, Tensor};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";
pub const CNWT_MAGIC: &[u8; 4] = b"CNWT";
pub const VERSION: u32 = 1;

/// Bounds-checked cursor that reports truncation against its format.
pub(crate) struct ByteReader<'a> {
    format: Format,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(format: Format, bytes: &'a [u8]) -> Self {
        ByteReader { format, bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                format: self.format,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.malformed("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::BadMagic {
                format: self.format,
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                format: self.format,
                version,
            });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    pub(crate) fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            format: self.format,
            reason: reason.into(),
        }
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_density(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.values.len() * 4);
    out.extend_from_slice(DMAP_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    put_f32s(&mut out, &map.values);
    out
}

pub fn decode_density(bytes: &[u8]) -> Result<DensityMap> {
    let mut r = ByteReader::new(Format::Density, bytes);
    r.magic(DMAP_MAGIC)?;
    r.version()?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    if height == 0 || width == 0 {
        return Err(r.malformed(format!("zero dimension {height}x{width}")));
    }
    let values = r.f32s(height.checked_mul(width).ok_or_else(|| r.malformed("dimension overflow"))?)?;
    r.finish()?;
    DensityMap::from_values(height, width, values)
}

pub fn write_density(path: impl AsRef<Path>, map: &DensityMap) -> Result<()> {
    Ok(std::fs::write(path, encode_density(map))?)
}

pub fn read_density(path: impl AsRef<Path>) -> Result<DensityMap> {
    decode_density(&std::fs::read(path)?)
}

/// One named convolution: weights `dims` (out, in, k, k) then `dims[0]` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn network_entries(net: &Network) -> Vec<WeightEntry> {
    net.conv_layers()
        .map(|c| WeightEntry {
            name: c.name.clone(),
            dims: c.weight.value.shape().dims().iter().map(|&d| d as u32).collect(),
            weights: c.weight.value.data().to_vec(),
            bias: c.bias.value.data().to_vec(),
        })
        .collect()
}

pub fn encode_weights(entries: &[WeightEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CNWT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::invalid("encode_weights", format!("layer name of {} bytes", name.len())))?;
        let rank = u8::try_from(e.dims.len())
            .map_err(|_| Error::invalid("encode_weights", format!("rank {} too large", e.dims.len())))?;
        let expected: usize = e.dims.iter().map(|&d| d as usize).product();
        if expected != e.weights.len() || e.dims.first().map(|&d| d as usize) != Some(e.bias.len()) {
            return Err(Error::WeightShape(format!(
                "{}: dims {:?} disagree with {} weights and {} biases",
                e.name,
                e.dims,
                e.weights.len(),
                e.bias.len()
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_f32s(&mut out, &e.weights);
        put_f32s(&mut out, &e.bias);
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut r = ByteReader::new(Format::Weights, bytes);
    r.magic(CNWT_MAGIC)?;
    r.version()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.malformed("layer name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        if rank == 0 {
            return Err(r.malformed(format!("{name}: rank 0")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| r.malformed(format!("{name}: dims {dims:?} overflow")))?;
        let weights = r.f32s(n)?;
        let bias = r.f32s(dims[0] as usize)?;
        entries.push(WeightEntry {
            name,
            dims,
            weights,
            bias,
        });
    }
    r.finish()?;
    Ok(entries)
}

/// Copies decoded weights into `net`; names, order and shapes must match
/// exactly. Momentum buffers and gradients are reset.
pub fn load_entries(net: &mut Network, entries: &[WeightEntry]) -> Result<()> {
    let layers = net.conv_layers().count();
    if layers != entries.len() {
        return Err(Error::WeightShape(format!(
            "file has {} layers, network has {layers}",
            entries.len()
        )));
    }
    for (c, e) in net.conv_layers_mut().zip(entries) {
        let dims: Vec<u32> = c.weight.value.shape().dims().iter().map(|&d| d as u32).collect();
        if c.name != e.name || dims != e.dims {
            return Err(Error::WeightShape(format!(
                "expected {} {:?}, found {} {:?}",
                c.name, dims, e.name, e.dims
            )));
        }
        c.weight = ParamState::new(Tensor::from_vec(c.weight.value.shape(), e.weights.clone())?);
        c.bias = ParamState::new(Tensor::from_vec(Shape::new(1, 1, 1, e.bias.len()), e.bias.clone())?);
    }
    Ok(())
}

pub fn write_weights(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    Ok(std::fs::write(path, encode_weights(&network_entries(net))?)?)
}

pub fn read_weights_into(path: impl AsRef<Path>, net: &mut Network) -> Result<()> {
    load_entries(net, &decode_weights(&std::fs::read(path)?)?)
}
