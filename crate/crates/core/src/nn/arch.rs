//! Architecture descriptors and the default LinearPilot network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::conv_output_dim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Steering,
    Throttle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Input { height: usize, width: usize, channels: usize },
    Conv { filters: usize, kernel_h: usize, kernel_w: usize, stride: usize, relu: bool },
    Dropout { rate: f32 },
    Flatten,
    Dense { units: usize, relu: bool },
    /// Linear output head fed by the last trunk layer.
    OutputDense { units: usize, head: Head },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. } | LayerSpec::OutputDense { .. })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerCounts {
    pub input: usize,
    pub conv: usize,
    pub dropout: usize,
    pub flatten: usize,
    pub dense: usize,
    pub output_dense: usize,
}

/// Weight and bias shapes of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub weight: Vec<usize>,
    pub bias: Vec<usize>,
}

impl ParamShape {
    pub fn count(&self) -> usize {
        self.weight.iter().product::<usize>() + self.bias.iter().product::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    layers: Vec<LayerSpec>,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self::linear_pilot()
    }
}

impl ArchitectureSpec {
    /// Five 5-5-5-3-3 convolutions, six dropouts, two hidden dense layers and
    /// linear steering and throttle heads over a 120x160 RGB input.
    pub fn linear_pilot() -> Self {
        Self::linear_pilot_for(120, 160)
    }

    pub fn linear_pilot_for(height: usize, width: usize) -> Self {
        let conv = |filters, k, stride| LayerSpec::Conv {
            filters,
            kernel_h: k,
            kernel_w: k,
            stride,
            relu: true,
        };
        let drop = LayerSpec::Dropout { rate: 0.1 };
        Self {
            layers: vec![
                LayerSpec::Input { height, width, channels: 3 },
                conv(24, 5, 2),
                drop,
                conv(32, 5, 2),
                drop,
                conv(64, 5, 2),
                drop,
                conv(64, 3, 1),
                drop,
                conv(64, 3, 1),
                drop,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 100, relu: true },
                drop,
                LayerSpec::Dense { units: 50, relu: true },
                LayerSpec::OutputDense { units: 1, head: Head::Steering },
                LayerSpec::OutputDense { units: 1, head: Head::Throttle },
            ],
        }
    }

    /// Validates and wraps a custom layer list.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { layers };
        spec.shape_chain()?;
        Ok(spec)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self.layers[0] {
            LayerSpec::Input { height, width, channels } => [height, width, channels],
            _ => unreachable!("validated architecture starts with Input"),
        }
    }

    pub fn trunk(&self) -> &[LayerSpec] {
        let heads = self.heads().len();
        &self.layers[1..self.layers.len() - heads]
    }

    pub fn heads(&self) -> Vec<Head> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::OutputDense { head, .. } => Some(*head),
                _ => None,
            })
            .collect()
    }

    pub fn counts(&self) -> LayerCounts {
        let mut c = LayerCounts::default();
        for l in &self.layers {
            match l {
                LayerSpec::Input { .. } => c.input += 1,
                LayerSpec::Conv { .. } => c.conv += 1,
                LayerSpec::Dropout { .. } => c.dropout += 1,
                LayerSpec::Flatten => c.flatten += 1,
                LayerSpec::Dense { .. } => c.dense += 1,
                LayerSpec::OutputDense { .. } => c.output_dense += 1,
            }
        }
        c
    }

    /// Per-sample output shape after each layer (the input layer included).
    /// Heads report their own `[units]` shape.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |m: String| Err(Error::InvalidParam(format!("architecture: {m}")));
        let mut chain = Vec::with_capacity(self.layers.len());
        let mut iter = self.layers.iter();
        let mut shape = match iter.next() {
            Some(&LayerSpec::Input { height, width, channels }) if height * width * channels > 0 => {
                vec![height, width, channels]
            }
            _ => return bad("first layer must be a non-empty Input".into()),
        };
        chain.push(shape.clone());
        let mut trunk_out: Option<Vec<usize>> = None;
        for layer in iter {
            match *layer {
                LayerSpec::Input { .. } => return bad("Input may only appear first".into()),
                LayerSpec::OutputDense { units, .. } => {
                    let feat = trunk_out.get_or_insert_with(|| shape.clone());
                    if feat.len() != 1 || units == 0 {
                        return bad("output heads need a flat feature vector".into());
                    }
                    chain.push(vec![units]);
                    continue;
                }
                _ if trunk_out.is_some() => return bad("output heads must come last".into()),
                LayerSpec::Conv { filters, kernel_h, kernel_w, stride, .. } => {
                    let [h, w, _] = shape[..] else {
                        return bad("Conv after Flatten".into());
                    };
                    if filters == 0 || stride == 0 || kernel_h == 0 || kernel_w == 0 || kernel_h > h || kernel_w > w {
                        return bad(format!("conv {kernel_h}x{kernel_w}/{stride} does not fit {h}x{w}"));
                    }
                    shape = vec![
                        conv_output_dim(h, kernel_h, stride),
                        conv_output_dim(w, kernel_w, stride),
                        filters,
                    ];
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return bad(format!("dropout rate {rate} outside [0, 1)"));
                    }
                }
                LayerSpec::Flatten => {
                    if shape.len() == 1 {
                        return bad("double Flatten".into());
                    }
                    shape = vec![shape.iter().product()];
                }
                LayerSpec::Dense { units, .. } => {
                    if shape.len() != 1 || units == 0 {
                        return bad("Dense needs a flat input".into());
                    }
                    shape = vec![units];
                }
            }
            chain.push(shape.clone());
        }
        if trunk_out.is_none() {
            return bad("no output heads".into());
        }
        Ok(chain)
    }

    /// Parameter shapes of every parameterized layer, in layer order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let chain = self.shape_chain().expect("validated architecture");
        let trunk_out = chain[chain.len() - self.heads().len() - 1].clone();
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = &chain[i.saturating_sub(1)];
            match *layer {
                LayerSpec::Conv { filters, kernel_h, kernel_w, .. } => out.push(ParamShape {
                    weight: vec![kernel_h, kernel_w, prev[2], filters],
                    bias: vec![filters],
                }),
                LayerSpec::Dense { units, .. } => out.push(ParamShape {
                    weight: vec![prev[0], units],
                    bias: vec![units],
                }),
                LayerSpec::OutputDense { units, .. } => out.push(ParamShape {
                    weight: vec![trunk_out[0], units],
                    bias: vec![units],
                }),
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(ParamShape::count).sum()
    }

    /// Width of the flattened feature vector.
    pub fn flatten_width(&self) -> Option<usize> {
        let chain = self.shape_chain().ok()?;
        self.layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Flatten))
            .map(|i| chain[i][0])
    }

    /// Binary descriptor used by the checkpoint header: a u32 layer count,
    /// then per layer a u8 tag and its fields as little-endian u32s (dropout
    /// rate as f32 bits).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        u32le(&mut out, self.layers.len());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Input { height, width, channels } => {
                    out.push(0);
                    for v in [height, width, channels] {
                        u32le(&mut out, v);
                    }
                }
                LayerSpec::Conv { filters, kernel_h, kernel_w, stride, relu } => {
                    out.push(1);
                    for v in [filters, kernel_h, kernel_w, stride, relu as usize] {
                        u32le(&mut out, v);
                    }
                }
                LayerSpec::Dropout { rate } => {
                    out.push(2);
                    out.extend_from_slice(&rate.to_bits().to_le_bytes());
                }
                LayerSpec::Flatten => out.push(3),
                LayerSpec::Dense { units, relu } => {
                    out.push(4);
                    u32le(&mut out, units);
                    u32le(&mut out, relu as usize);
                }
                LayerSpec::OutputDense { units, head } => {
                    out.push(5);
                    u32le(&mut out, units);
                    u32le(&mut out, head as usize);
                }
            }
        }
        out
    }

    /// Parses a descriptor from the front of `bytes`, returning the spec and
    /// the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        struct Reader<'a> {
            bytes: &'a [u8],
            pos: usize,
        }
        impl Reader<'_> {
            fn take(&mut self, n: usize) -> Result<&[u8]> {
                let s = self
                    .bytes
                    .get(self.pos..self.pos + n)
                    .ok_or_else(|| Error::Checkpoint("truncated architecture descriptor".into()))?;
                self.pos += n;
                Ok(s)
            }
            fn u32(&mut self) -> Result<usize> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
            }
            fn flag(&mut self) -> Result<bool> {
                match self.u32()? {
                    0 => Ok(false),
                    1 => Ok(true),
                    v => Err(Error::Checkpoint(format!("invalid flag {v}"))),
                }
            }
        }
        let mut r = Reader { bytes, pos: 0 };
        let n = r.u32()?;
        if n > 4096 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.take(1)?[0];
            layers.push(match tag {
                0 => LayerSpec::Input {
                    height: r.u32()?,
                    width: r.u32()?,
                    channels: r.u32()?,
                },
                1 => LayerSpec::Conv {
                    filters: r.u32()?,
                    kernel_h: r.u32()?,
                    kernel_w: r.u32()?,
                    stride: r.u32()?,
                    relu: r.flag()?,
                },
                2 => LayerSpec::Dropout {
                    rate: f32::from_bits(r.u32()? as u32),
                },
                3 => LayerSpec::Flatten,
                4 => LayerSpec::Dense {
                    units: r.u32()?,
                    relu: r.flag()?,
                },
                5 => LayerSpec::OutputDense {
                    units: r.u32()?,
                    head: match r.u32()? {
                        0 => Head::Steering,
                        1 => Head::Throttle,
                        h => return Err(Error::Checkpoint(format!("unknown head {h}"))),
                    },
                },
                t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
            });
        }
        let spec = Self::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((spec, r.pos))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_inventory() {
        let c = ArchitectureSpec::linear_pilot().counts();
        assert_eq!(
            c,
            LayerCounts {
                input: 1,
                conv: 5,
                dropout: 6,
                flatten: 1,
                dense: 2,
                output_dense: 2
            }
        );
    }

    #[test]
    fn default_shape_chain() {
        let spec = ArchitectureSpec::linear_pilot();
        let chain = spec.shape_chain().unwrap();
        let without_dropout: Vec<Vec<usize>> = spec
            .layers()
            .iter()
            .zip(&chain)
            .filter(|(l, _)| !matches!(l, LayerSpec::Dropout { .. }))
            .map(|(_, s)| s.clone())
            .collect();
        let expected: Vec<Vec<usize>> = vec![
            vec![120, 160, 3],
            vec![58, 78, 24],
            vec![27, 37, 32],
            vec![12, 17, 64],
            vec![10, 15, 64],
            vec![8, 13, 64],
            vec![6656],
            vec![100],
            vec![50],
            vec![1],
            vec![1],
        ];
        assert_eq!(without_dropout, expected);
        assert_eq!(spec.flatten_width(), Some(6656));
    }

    #[test]
    fn default_param_count() {
        // Independent per-layer tally: (kh*kw*c_in + 1) * c_out for convs,
        // (in + 1) * out for dense layers.
        let tally = (5 * 5 * 3 + 1) * 24
            + (5 * 5 * 24 + 1) * 32
            + (5 * 5 * 32 + 1) * 64
            + (3 * 3 * 64 + 1) * 64
            + (3 * 3 * 64 + 1) * 64
            + (6656 + 1) * 100
            + (100 + 1) * 50
            + 2 * (50 + 1);
        assert_eq!(tally, 817_028);
        assert_eq!(ArchitectureSpec::linear_pilot().param_count(), tally);
    }

    #[test]
    fn descriptor_round_trip() {
        let spec = ArchitectureSpec::linear_pilot();
        let bytes = spec.encode();
        let (back, used) = ArchitectureSpec::decode(&bytes).unwrap();
        assert_eq!(back, spec);
        assert_eq!(used, bytes.len());
        assert!(ArchitectureSpec::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rejects_malformed() {
        use LayerSpec::*;
        let input = Input { height: 8, width: 8, channels: 1 };
        let head = OutputDense { units: 1, head: Head::Steering };
        assert!(ArchitectureSpec::new(vec![input, Flatten, head]).is_ok());
        assert!(ArchitectureSpec::new(vec![input, head]).is_err());
        assert!(ArchitectureSpec::new(vec![input, Flatten]).is_err());
        assert!(ArchitectureSpec::new(vec![Flatten, head]).is_err());
        assert!(ArchitectureSpec::new(vec![input, Flatten, head, Dense { units: 2, relu: true }]).is_err());
        let big = Conv { filters: 2, kernel_h: 9, kernel_w: 3, stride: 1, relu: true };
        assert!(ArchitectureSpec::new(vec![input, big, Flatten, head]).is_err());
    }
}
