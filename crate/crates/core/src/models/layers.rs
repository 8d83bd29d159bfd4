//! Parameterized building blocks shared by both architectures.

use crate::autodiff::{BnMode, Mode, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// Mutable state threaded through one forward pass.
pub(crate) struct Pass<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
    pub rng: &'a mut RngStream,
    pub batch: usize,
}

fn glorot<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut RngStream,
) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::rand_uniform(shape, -limit, limit, rng)
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub window: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        name: &str,
        c_in: usize,
        c_out: usize,
        window: usize,
        pad: usize,
    ) -> Result<Self> {
        let w = glorot(&[c_out, c_in, window], c_in * window, c_out * window, rng)?;
        let w = store.add(format!("{name}.weight"), w, true)?;
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])?, true)?;
        Ok(Self {
            w,
            b,
            c_in,
            c_out,
            window,
            pad,
        })
    }

    pub fn params(&self) -> usize {
        self.c_out * self.c_in * self.window + self.c_out
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad + 1).saturating_sub(self.window)
    }

    pub fn apply<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let w = pass.tape.param(pass.store, self.w);
        let b = pass.tape.param(pass.store, self.b);
        pass.tape.conv1d(x, w, b, self.pad)
    }

    /// Convolution applied directly to one-hot indices.
    pub fn apply_onehot<T: Scalar>(
        &self,
        pass: &mut Pass<'_, T>,
        indices: &[usize],
        len: usize,
    ) -> Result<Var> {
        let w = pass.tape.param(pass.store, self.w);
        let b = pass.tape.param(pass.store, self.b);
        pass.tape
            .onehot_conv1d(indices, pass.batch, len, w, b, self.pad)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub f_in: usize,
    pub f_out: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        name: &str,
        f_in: usize,
        f_out: usize,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.weight"),
            glorot(&[f_out, f_in], f_in, f_out, rng)?,
            true,
        )?;
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[f_out])?, true)?;
        Ok(Self { w, b, f_in, f_out })
    }

    pub fn params(&self) -> usize {
        self.f_out * self.f_in + self.f_out
    }

    pub fn apply<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let w = pass.tape.param(pass.store, self.w);
        let b = pass.tape.param(pass.store, self.b);
        pass.tape.linear(x, w, b)
    }
}

/// Batch normalization with running statistics kept as non-trainable buffers.
#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl Norm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        eps: f64,
        momentum: f64,
    ) -> Result<Self> {
        Ok(Self {
            scale: store.add(
                format!("{name}.scale"),
                Tensor::new(&[channels], T::one())?,
                true,
            )?,
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[channels])?, true)?,
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels])?,
                false,
            )?,
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::new(&[channels], T::one())?,
                false,
            )?,
            channels,
            eps,
            momentum,
        })
    }

    pub fn params(&self) -> usize {
        2 * self.channels
    }

    pub fn apply<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let scale = pass.tape.param(pass.store, self.scale);
        let shift = pass.tape.param(pass.store, self.shift);
        match pass.mode {
            Mode::Train => {
                let (y, stats) = pass
                    .tape
                    .batch_norm(x, scale, shift, BnMode::Train, self.eps)?;
                let stats = stats.expect("train mode returns batch statistics");
                // single-sample batches normalize but do not move the running averages
                if pass.batch > 1 {
                    let m = T::of(self.momentum);
                    let keep = T::one() - m;
                    let update = |store: &mut ParamStore<T>, id: ParamId, batch: &[T]| {
                        for (r, &v) in store.get_mut(id).value.data_mut().iter_mut().zip(batch) {
                            *r = m * *r + keep * v;
                        }
                    };
                    update(pass.store, self.running_mean, &stats.mean);
                    update(pass.store, self.running_var, &stats.var);
                }
                Ok(y)
            }
            Mode::Eval => {
                let (mean, var) = (
                    pass.store.value(self.running_mean).clone(),
                    pass.store.value(self.running_var).clone(),
                );
                let (y, _) = pass.tape.batch_norm(
                    x,
                    scale,
                    shift,
                    BnMode::Eval {
                        mean: &mean,
                        var: &var,
                    },
                    self.eps,
                )?;
                Ok(y)
            }
        }
    }
}
