use rand::Rng;

use super::layers::{Conv2d, Dense, LayerSpec, MaxPool2d, PRelu, Softmax};
use super::Tensor;
use crate::error::{Error, Result};

/// Initial weights are drawn uniformly from `[-INIT_RANGE, INIT_RANGE]`.
pub const INIT_RANGE: f32 = 0.1;
/// Initial PReLU slope.
pub const INIT_PRELU_SLOPE: f32 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetKind {
    PNet,
    RNet,
    ONet,
    Custom,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::PNet => "pnet",
            NetKind::RNet => "rnet",
            NetKind::ONet => "onet",
            NetKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "pnet" => NetKind::PNet,
            "rnet" => NetKind::RNet,
            "onet" => NetKind::ONet,
            "custom" => NetKind::Custom,
            _ => return None,
        })
    }

    /// Side of the square input window: the minimum for the fully
    /// convolutional P-Net, the exact size for R-Net and O-Net.
    pub fn input_size(self) -> Option<usize> {
        match self {
            NetKind::PNet => Some(12),
            NetKind::RNet => Some(24),
            NetKind::ONet => Some(48),
            NetKind::Custom => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Two-way softmax; channel 1 is the face probability.
    Score,
    /// Four box-regression offsets.
    BoxReg,
    /// Ten landmark coordinates, box relative.
    Landmarks,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Score => "score",
            HeadKind::BoxReg => "box",
            HeadKind::Landmarks => "landmarks",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "score" => HeadKind::Score,
            "box" => HeadKind::BoxReg,
            "landmarks" => HeadKind::Landmarks,
            _ => return None,
        })
    }

    pub fn width(self) -> usize {
        match self {
            HeadKind::Score => 2,
            HeadKind::BoxReg => 4,
            HeadKind::Landmarks => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub kind: HeadKind,
    pub layers: Vec<LayerSpec>,
}

/// Channel widths for the preset architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchSize {
    /// The widths of the published MTCNN networks.
    Canonical,
    /// Narrow variants that train in seconds on synthetic fixtures.
    Tiny,
}

/// A shared trunk followed by one branch per output head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub kind: NetKind,
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<Head>,
}

/// Head outputs of one forward pass.
///
/// For P-Net the tensors are maps (`2×h×w`, `4×h×w`); for the other
/// networks they are flat vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub score: Tensor,
    pub bbox: Option<Tensor>,
    pub landmarks: Option<Tensor>,
}

fn conv<R: Rng + ?Sized>(rng: &mut R, out_ch: usize, in_ch: usize, k: usize) -> LayerSpec {
    LayerSpec::Conv(Conv2d {
        weight: Tensor::uniform(&[out_ch, in_ch, k, k], -INIT_RANGE, INIT_RANGE, rng),
        bias: Tensor::zeros(&[out_ch]),
        stride: 1,
        padding: 0,
    })
}

fn dense<R: Rng + ?Sized>(rng: &mut R, out_n: usize, in_n: usize) -> LayerSpec {
    LayerSpec::Dense(Dense {
        weight: Tensor::uniform(&[out_n, in_n], -INIT_RANGE, INIT_RANGE, rng),
        bias: Tensor::zeros(&[out_n]),
    })
}

fn prelu(channels: usize) -> LayerSpec {
    LayerSpec::PRelu(PRelu {
        alpha: Tensor::filled(&[channels], INIT_PRELU_SLOPE),
    })
}

fn pool(window: usize, stride: usize) -> LayerSpec {
    LayerSpec::MaxPool(MaxPool2d { window, stride })
}

fn softmax(axis: usize) -> LayerSpec {
    LayerSpec::Softmax(Softmax { axis })
}

impl NetworkSpec {
    pub fn custom(trunk: Vec<LayerSpec>, heads: Vec<Head>) -> Self {
        NetworkSpec {
            kind: NetKind::Custom,
            trunk,
            heads,
        }
    }

    pub fn preset<R: Rng + ?Sized>(kind: NetKind, size: ArchSize, rng: &mut R) -> Result<Self> {
        match kind {
            NetKind::PNet => Ok(Self::pnet(size, rng)),
            NetKind::RNet => Ok(Self::rnet(size, rng)),
            NetKind::ONet => Ok(Self::onet(size, rng)),
            NetKind::Custom => Err(Error::usage("no preset for custom networks")),
        }
    }

    /// conv3-prelu-pool2 / conv3-prelu / conv3-prelu, then 1×1 conv heads.
    pub fn pnet<R: Rng + ?Sized>(size: ArchSize, rng: &mut R) -> Self {
        let [c1, c2, c3] = match size {
            ArchSize::Canonical => [10, 16, 32],
            ArchSize::Tiny => [6, 10, 16],
        };
        let trunk = vec![
            conv(rng, c1, 3, 3),
            prelu(c1),
            pool(2, 2),
            conv(rng, c2, c1, 3),
            prelu(c2),
            conv(rng, c3, c2, 3),
            prelu(c3),
        ];
        let heads = vec![
            Head {
                kind: HeadKind::Score,
                layers: vec![conv(rng, 2, c3, 1), softmax(0)],
            },
            Head {
                kind: HeadKind::BoxReg,
                layers: vec![conv(rng, 4, c3, 1)],
            },
        ];
        NetworkSpec {
            kind: NetKind::PNet,
            trunk,
            heads,
        }
    }

    /// Three conv stages on a 24×24 crop, then a dense layer (128 wide canonically).
    pub fn rnet<R: Rng + ?Sized>(size: ArchSize, rng: &mut R) -> Self {
        let ([c1, c2, c3], hidden) = match size {
            ArchSize::Canonical => ([28, 48, 64], 128),
            ArchSize::Tiny => ([8, 12, 16], 32),
        };
        // 24 -> 22 -> pool 10 -> 8 -> pool 3 -> 2
        let flat = c3 * 2 * 2;
        let trunk = vec![
            conv(rng, c1, 3, 3),
            prelu(c1),
            pool(3, 2),
            conv(rng, c2, c1, 3),
            prelu(c2),
            pool(3, 2),
            conv(rng, c3, c2, 2),
            prelu(c3),
            dense(rng, hidden, flat),
            prelu(hidden),
        ];
        let heads = vec![
            Head {
                kind: HeadKind::Score,
                layers: vec![dense(rng, 2, hidden), softmax(0)],
            },
            Head {
                kind: HeadKind::BoxReg,
                layers: vec![dense(rng, 4, hidden)],
            },
        ];
        NetworkSpec {
            kind: NetKind::RNet,
            trunk,
            heads,
        }
    }

    /// Four conv stages on a 48×48 crop, a dense layer (256 wide canonically), three heads.
    pub fn onet<R: Rng + ?Sized>(size: ArchSize, rng: &mut R) -> Self {
        let ([c1, c2, c3, c4], hidden) = match size {
            ArchSize::Canonical => ([32, 64, 64, 128], 256),
            ArchSize::Tiny => ([8, 12, 16, 24], 48),
        };
        // 48 -> 46 -> pool 22 -> 20 -> pool 9 -> 7 -> pool 3 -> 2
        let flat = c4 * 2 * 2;
        let trunk = vec![
            conv(rng, c1, 3, 3),
            prelu(c1),
            pool(3, 2),
            conv(rng, c2, c1, 3),
            prelu(c2),
            pool(3, 2),
            conv(rng, c3, c2, 3),
            prelu(c3),
            pool(2, 2),
            conv(rng, c4, c3, 2),
            prelu(c4),
            dense(rng, hidden, flat),
            prelu(hidden),
        ];
        let heads = vec![
            Head {
                kind: HeadKind::Score,
                layers: vec![dense(rng, 2, hidden), softmax(0)],
            },
            Head {
                kind: HeadKind::BoxReg,
                layers: vec![dense(rng, 4, hidden)],
            },
            Head {
                kind: HeadKind::Landmarks,
                layers: vec![dense(rng, 10, hidden)],
            },
        ];
        NetworkSpec {
            kind: NetKind::ONet,
            trunk,
            heads,
        }
    }

    pub fn head(&self, kind: HeadKind) -> Option<&Head> {
        self.heads.iter().find(|h| h.kind == kind)
    }

    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        let (c, h, w) = match self.kind {
            NetKind::Custom => return Ok(()),
            _ => input.chw()?,
        };
        let side = self.kind.input_size().unwrap_or(0);
        let ok = c == 3
            && match self.kind {
                NetKind::PNet => h >= side && w >= side,
                _ => h == side && w == side,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(self.kind.name(), input.shape(), &[3, side, side]))
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<NetOutput> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.trunk {
            x = layer.forward(&x)?;
        }
        let mut score = None;
        let mut bbox = None;
        let mut landmarks = None;
        for head in &self.heads {
            let mut y = x.clone();
            for layer in &head.layers {
                y = layer.forward(&y)?;
            }
            match head.kind {
                HeadKind::Score => score = Some(y),
                HeadKind::BoxReg => bbox = Some(y),
                HeadKind::Landmarks => landmarks = Some(y),
            }
        }
        let score = score.ok_or_else(|| Error::usage("network has no score head"))?;
        Ok(NetOutput {
            score,
            bbox,
            landmarks,
        })
    }

    /// All trainable tensors: trunk first, then heads, each in layer order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.trunk
            .iter()
            .chain(self.heads.iter().flat_map(|h| h.layers.iter()))
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flat_map(|h| h.layers.iter_mut()))
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn onet_emits_three_heads() {
        let mut r = rng();
        for size in [ArchSize::Canonical, ArchSize::Tiny] {
            let net = NetworkSpec::onet(size, &mut r);
            let x = Tensor::uniform(&[3, 48, 48], -1.0, 1.0, &mut r);
            let out = net.forward(&x).unwrap();
            assert_eq!(out.score.shape(), &[2]);
            assert_eq!(out.bbox.unwrap().shape(), &[4]);
            assert_eq!(out.landmarks.unwrap().shape(), &[10]);
        }
    }

    #[test]
    fn rnet_heads_and_input_contract() {
        let mut r = rng();
        let net = NetworkSpec::rnet(ArchSize::Canonical, &mut r);
        let out = net.forward(&Tensor::zeros(&[3, 24, 24])).unwrap();
        assert_eq!(out.score.shape(), &[2]);
        assert_eq!(out.bbox.unwrap().shape(), &[4]);
        assert!(out.landmarks.is_none());
        assert!(matches!(net.forward(&Tensor::zeros(&[3, 25, 24])), Err(Error::Shape { .. })));
        let onet = NetworkSpec::onet(ArchSize::Tiny, &mut r);
        assert!(onet.forward(&Tensor::zeros(&[3, 24, 24])).is_err());
    }

    #[test]
    fn pnet_map_extent_matches_stride_two_window_count() {
        let mut r = rng();
        let net = NetworkSpec::pnet(ArchSize::Canonical, &mut r);
        for (h, w) in [(12, 12), (24, 24), (13, 30), (31, 17)] {
            let out = net.forward(&Tensor::zeros(&[3, h, w])).unwrap();
            // number of 12x12 windows at stride 2
            let rows = (0..).step_by(2).take_while(|y| y + 12 <= h).count();
            let cols = (0..).step_by(2).take_while(|x| x + 12 <= w).count();
            assert_eq!(out.score.shape(), &[2, rows, cols]);
            assert_eq!(out.bbox.as_ref().unwrap().shape(), &[4, rows, cols]);
        }
        let out = net.forward(&Tensor::zeros(&[3, 24, 24])).unwrap();
        assert_eq!(out.score.shape(), &[2, 7, 7]);
        assert!(net.forward(&Tensor::zeros(&[3, 11, 40])).is_err());
    }

    #[test]
    fn forward_is_pure() {
        let mut r = rng();
        let net = NetworkSpec::pnet(ArchSize::Tiny, &mut r);
        let x = Tensor::uniform(&[3, 20, 20], -1.0, 1.0, &mut r);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn preset_init_ranges() {
        let net = NetworkSpec::onet(ArchSize::Canonical, &mut rng());
        for layer in net.trunk.iter().chain(net.heads.iter().flat_map(|h| h.layers.iter())) {
            match layer {
                LayerSpec::Conv(c) => {
                    assert!(c.weight.data().iter().all(|v| v.abs() <= INIT_RANGE));
                    assert!(c.bias.data().iter().all(|&v| v == 0.0));
                }
                LayerSpec::Dense(d) => {
                    assert!(d.weight.data().iter().all(|v| v.abs() <= INIT_RANGE));
                    assert!(d.bias.data().iter().all(|&v| v == 0.0));
                }
                _ => {}
            }
        }
    }
}
