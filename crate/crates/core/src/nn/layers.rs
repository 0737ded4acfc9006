use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::ops::leaky_relu;
use crate::nn::ParamStore;

/// Dense layer with `(in, out)` weight layout; accepts inputs of any rank.
#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    /// Registers `{name}.w` (normal, `gain / sqrt(in)`) and `{name}.b` (zero).
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        store.normal(&format!("{name}.w"), &[inp, out], gain / (inp as f64).sqrt(), rng)?;
        store.zeros(&format!("{name}.b"), &[out])?;
        Ok(())
    }

    pub fn init_zero(store: &mut ParamStore, name: &str, inp: usize, out: usize) -> Result<()> {
        store.zeros(&format!("{name}.w"), &[inp, out])?;
        store.zeros(&format!("{name}.b"), &[out])?;
        Ok(())
    }

    pub fn load(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self { w: store.get(&format!("{name}.w"))?, b: store.get(&format!("{name}.b"))? })
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> &Tensor {
        &self.b
    }

    pub fn in_dim(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let inp = *dims.last().expect("rank >= 1");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, inp))?.matmul(&self.w)?.broadcast_add(&self.b)?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

/// Fully connected stack with LeakyReLU between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    slope: f64,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]` gives `widths.len() - 1` layers.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        slope: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        for (i, w) in widths.windows(2).enumerate() {
            let g = if i + 2 == widths.len() { 1.0 } else { gain };
            Linear::init(store, &format!("{name}.{i}"), w[0], w[1], g, rng)?;
        }
        Ok(())
    }

    pub fn load(store: &ParamStore, name: &str, n_layers: usize, slope: f64) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| Linear::load(store, &format!("{name}.{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, slope })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = leaky_relu(&h, self.slope)?;
            }
        }
        Ok(h)
    }
}

/// 2-D convolution, weights `(out, in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Tensor,
    b: Tensor,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        k: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let fan_in = (inp * k * k) as f64;
        store.normal(&format!("{name}.w"), &[out, inp, k, k], gain / fan_in.sqrt(), rng)?;
        store.zeros(&format!("{name}.b"), &[out])?;
        Ok(())
    }

    pub fn load(store: &ParamStore, name: &str, stride: usize, pad: usize) -> Result<Self> {
        Ok(Self {
            w: store.get(&format!("{name}.w"))?,
            b: store.get(&format!("{name}.b"))?,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.w, self.pad, self.stride, 1, 1)?;
        let b = self.b.reshape((1, self.out_channels(), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    /// Global average pool.
    Mean,
    Flatten,
}

/// Layout of a stride-2 conv stack with an MLP head.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvNetSpec {
    pub in_channels: usize,
    pub in_res: usize,
    pub channels: Vec<usize>,
    /// Head widths after pooling, ending with the output size. Empty for a
    /// feature-only network.
    pub head: Vec<usize>,
    pub pool: Pool,
    pub slope: f64,
}

impl ConvNetSpec {
    pub fn pooled_dim(&self) -> usize {
        let c = *self.channels.last().unwrap_or(&self.in_channels);
        match self.pool {
            Pool::Mean => c,
            Pool::Flatten => {
                let r = self.in_res >> self.channels.len();
                c * r * r
            }
        }
    }

    pub fn out_dim(&self) -> usize {
        *self.head.last().unwrap_or(&self.pooled_dim())
    }
}

#[derive(Debug, Clone)]
pub struct ConvNet {
    spec: ConvNetSpec,
    convs: Vec<Conv2d>,
    head: Option<Mlp>,
}

impl ConvNet {
    /// `zero_head` zeroes the last head layer so the network starts at 0.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        spec: &ConvNetSpec,
        zero_head: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if spec.in_res >> spec.channels.len() == 0 {
            return Err(crate::Error::arg("too many stride-2 blocks for the input resolution"));
        }
        let gain = (2.0 / (1.0 + spec.slope * spec.slope)).sqrt();
        let mut c = spec.in_channels;
        for (i, &o) in spec.channels.iter().enumerate() {
            Conv2d::init(store, &format!("{name}.conv{i}"), c, o, 3, gain, rng)?;
            c = o;
        }
        if !spec.head.is_empty() {
            let mut widths = vec![spec.pooled_dim()];
            widths.extend(&spec.head);
            Mlp::init(store, &format!("{name}.head"), &widths, spec.slope, rng)?;
            if zero_head {
                let last = format!("{name}.head.{}", spec.head.len() - 1);
                store.set(&format!("{last}.w"), &store.get(&format!("{last}.w"))?.zeros_like()?)?;
            }
        }
        Ok(())
    }

    pub fn load(store: &ParamStore, name: &str, spec: &ConvNetSpec) -> Result<Self> {
        let convs = (0..spec.channels.len())
            .map(|i| Conv2d::load(store, &format!("{name}.conv{i}"), 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let head = if spec.head.is_empty() {
            None
        } else {
            Some(Mlp::load(store, &format!("{name}.head"), spec.head.len(), spec.slope)?)
        };
        Ok(Self { spec: spec.clone(), convs, head })
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    pub fn head(&self) -> Option<&Mlp> {
        self.head.as_ref()
    }

    /// Activations after every conv block.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for c in &self.convs {
            h = leaky_relu(&c.forward(&h)?, self.spec.slope)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn pooled(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.features(x)?.pop().unwrap_or_else(|| x.clone());
        let b = h.dim(0)?;
        Ok(match self.spec.pool {
            Pool::Mean => h.mean((2, 3))?,
            Pool::Flatten => h.reshape((b, ()))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.pooled(x)?;
        match &self.head {
            Some(h) => h.forward(&p),
            None => Ok(p),
        }
    }
}
