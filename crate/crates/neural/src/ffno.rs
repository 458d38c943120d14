//! Factorized Fourier neural operator with a hand-written backward pass.
//!
//! Activations are stored as `(channels, ny * nx)` matrices, row-major over
//! the patch with `y` outer.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use msno_core::rng::{self, streams};
use msno_core::{Error, Result};

use crate::dft::TruncatedDft;

/// Input channels: normalized log κ, x coordinate, y coordinate.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FfnoConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Retained modes `(M_x, M_y)`.
    pub modes: (usize, usize),
    pub n_out: usize,
    /// Patch shape `(nx, ny)` in nodes.
    pub patch: (usize, usize),
}

impl FfnoConfig {
    pub fn validate(&self) -> Result<()> {
        let (nx, ny) = self.patch;
        let (mx, my) = self.modes;
        if self.layers == 0 || self.hidden == 0 || self.n_out == 0 || nx < 2 || ny < 2 {
            return Err(Error::Config(format!("degenerate F-FNO config {self:?}")));
        }
        if mx == 0 || my == 0 || mx > nx / 2 + 1 || my > ny / 2 + 1 {
            return Err(Error::Config(format!(
                "modes {:?} exceed the half spectrum of a {nx}x{ny} patch (max {}, {})",
                self.modes,
                nx / 2 + 1,
                ny / 2 + 1
            )));
        }
        Ok(())
    }

    /// Real parameters in the spectral weights: `L · H² · (M_x + M_y)`
    /// complex numbers.
    pub fn spectral_param_count(&self) -> usize {
        2 * self.layers * self.hidden * self.hidden * (self.modes.0 + self.modes.1)
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerLayout {
    spec_x: usize,
    spec_y: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    lift_w: usize,
    lift_b: usize,
    layers: Vec<LayerLayout>,
    proj_w: usize,
    proj_b: usize,
    total: usize,
}

impl Layout {
    fn new(c: &FfnoConfig) -> Self {
        let h = c.hidden;
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let lift_w = take(h * INPUT_CHANNELS);
        let lift_b = take(h);
        let layers = (0..c.layers)
            .map(|_| LayerLayout {
                spec_x: take(2 * c.modes.0 * h * h),
                spec_y: take(2 * c.modes.1 * h * h),
                w1: take(h * h),
                b1: take(h),
                w2: take(h * h),
                b2: take(h),
            })
            .collect();
        let proj_w = take(c.n_out * h);
        let proj_b = take(c.n_out);
        Self { lift_w, lift_b, layers, proj_w, proj_b, total: off }
    }
}

/// Names and offsets of every tensor, for checkpoint files. Spectral tensors
/// are `[mode][re|im][out][in]`.
pub fn tensor_table(c: &FfnoConfig) -> Vec<(String, usize, Vec<usize>)> {
    let l = Layout::new(c);
    let h = c.hidden;
    let mut t = vec![("lift_w".to_string(), l.lift_w, vec![h, INPUT_CHANNELS]), ("lift_b".into(), l.lift_b, vec![h])];
    for (i, ll) in l.layers.iter().enumerate() {
        t.push((format!("layer{i}_spec_x"), ll.spec_x, vec![c.modes.0, 2, h, h]));
        t.push((format!("layer{i}_spec_y"), ll.spec_y, vec![c.modes.1, 2, h, h]));
        t.push((format!("layer{i}_w1"), ll.w1, vec![h, h]));
        t.push((format!("layer{i}_b1"), ll.b1, vec![h]));
        t.push((format!("layer{i}_w2"), ll.w2, vec![h, h]));
        t.push((format!("layer{i}_b2"), ll.b2, vec![h]));
    }
    t.push(("proj_w".into(), l.proj_w, vec![c.n_out, h]));
    t.push(("proj_b".into(), l.proj_b, vec![c.n_out]));
    t
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / π)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Clone, Debug)]
pub struct Ffno {
    pub config: FfnoConfig,
    pub params: Vec<f64>,
    layout: Layout,
    dft_x: TruncatedDft,
    dft_y: TruncatedDft,
}

struct SpectralCache {
    xr: Array2<f64>,
    xi: Array2<f64>,
}

struct LayerCache {
    sx: SpectralCache,
    sy: SpectralCache,
    k: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    a2: Array2<f64>,
}

pub struct ForwardCache {
    input: Array2<f64>,
    layers: Vec<LayerCache>,
    last: Array2<f64>,
}

impl Ffno {
    pub fn new(config: FfnoConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape { expected: format!("{} parameters", layout.total), got: params.len().to_string() });
        }
        let dft_x = TruncatedDft::new(config.patch.0, config.modes.0);
        let dft_y = TruncatedDft::new(config.patch.1, config.modes.1);
        Ok(Self { config, params, layout, dft_x, dft_y })
    }

    pub fn init(config: FfnoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let h = config.hidden as f64;
        let mut rng = rng::stream(seed, streams::PARAM_INIT);
        let mut params = vec![0.0; layout.total];
        let mut fill = |off: usize, n: usize, std: f64| {
            for p in &mut params[off..off + n] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = std * z;
            }
        };
        let hh = config.hidden * config.hidden;
        fill(layout.lift_w, config.hidden * INPUT_CHANNELS, (1.0 / INPUT_CHANNELS as f64).sqrt());
        for l in &layout.layers {
            fill(l.spec_x, 2 * config.modes.0 * hh, 1.0 / (h * 2f64.sqrt()));
            fill(l.spec_y, 2 * config.modes.1 * hh, 1.0 / (h * 2f64.sqrt()));
            fill(l.w1, hh, (2.0 / h).sqrt());
            fill(l.w2, hh, (1.0 / h).sqrt());
        }
        fill(layout.proj_w, config.n_out * config.hidden, (1.0 / h).sqrt());
        Self::new(config, params)
    }

    fn mat(&self, off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols]).expect("layout")
    }

    fn vec_col(&self, off: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_vec((n, 1), self.params[off..off + n].to_vec()).expect("layout")
    }

    fn n_points(&self) -> usize {
        self.config.patch.0 * self.config.patch.1
    }

    pub fn forward(&self, input: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.forward_cached(input)?.0)
    }

    /// `input` is `(3, ny, nx)`; the output is `(n_out, ny, nx)`.
    pub fn forward_cached(&self, input: &Array3<f64>) -> Result<(Array3<f64>, ForwardCache)> {
        let (nx, ny) = self.config.patch;
        if input.dim() != (INPUT_CHANNELS, ny, nx) {
            return Err(Error::Shape { expected: format!("({INPUT_CHANNELS}, {ny}, {nx})"), got: format!("{:?}", input.dim()) });
        }
        let h = self.config.hidden;
        let n = self.n_points();
        let x = input.as_standard_layout().into_owned().into_shape_with_order((INPUT_CHANNELS, n)).expect("contiguous");
        let mut z = self.mat(self.layout.lift_w, h, INPUT_CHANNELS).dot(&x) + self.vec_col(self.layout.lift_b, h);
        let mut caches = Vec::with_capacity(self.config.layers);
        for (li, l) in self.layout.layers.iter().enumerate() {
            let (kx, sx) = self.spectral(&z, l.spec_x, Axis(2));
            let (ky, sy) = self.spectral(&z, l.spec_y, Axis(1));
            let k = kx + ky;
            let a1 = self.mat(l.w1, h, h).dot(&k) + self.vec_col(l.b1, h);
            let h1 = a1.mapv(gelu);
            let a2 = self.mat(l.w2, h, h).dot(&h1) + self.vec_col(l.b2, h);
            let next = &z + &a2.mapv(gelu);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activation in layer {li}")));
            }
            caches.push(LayerCache { sx, sy, k, a1, h1, a2 });
            z = next;
        }
        let out = self.mat(self.layout.proj_w, self.config.n_out, h).dot(&z) + self.vec_col(self.layout.proj_b, self.config.n_out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("activation in output projection".into()));
        }
        let out3 = out.into_shape_with_order((self.config.n_out, ny, nx)).expect("contiguous");
        Ok((out3, ForwardCache { input: x, layers: caches, last: z }))
    }

    /// `z` as `(H, ny, nx)` with the transform along `axis` (2 = x, 1 = y),
    /// returned as `(H, N)`.
    fn spectral(&self, z: &Array2<f64>, off: usize, axis: Axis) -> (Array2<f64>, SpectralCache) {
        let (lines, dft) = self.to_lines(z, axis);
        let xr = lines.dot(&dft.fwd_cos.t());
        let xi = lines.dot(&dft.fwd_sin.t());
        let (yr, yi) = self.mix_modes(&xr, &xi, off, dft.m, false);
        let out = yr.dot(&dft.inv_cos) + yi.dot(&dft.inv_sin);
        (self.from_lines(out, axis), SpectralCache { xr, xi })
    }

    fn spectral_backward(&self, d_out: &Array2<f64>, cache: &SpectralCache, off: usize, axis: Axis, grad: &mut [f64]) -> Array2<f64> {
        let (d_lines, dft) = self.to_lines(d_out, axis);
        let dyr = d_lines.dot(&dft.inv_cos.t());
        let dyi = d_lines.dot(&dft.inv_sin.t());
        let h = self.config.hidden;
        let a = dyr.nrows() / h;
        let m = dft.m;
        let v = |x: &Array2<f64>| x.clone().into_shape_with_order((h, a, m)).expect("contiguous");
        let (xr3, xi3, dyr3, dyi3) = (v(&cache.xr), v(&cache.xi), v(&dyr), v(&dyi));
        for k in 0..m {
            let (xr, xi) = (xr3.slice(s![.., .., k]), xi3.slice(s![.., .., k]));
            let (gr, gi) = (dyr3.slice(s![.., .., k]), dyi3.slice(s![.., .., k]));
            let dwr = gr.dot(&xr.t()) + gi.dot(&xi.t());
            let dwi = gi.dot(&xr.t()) - gr.dot(&xi.t());
            let base = off + 2 * k * h * h;
            for (g, d) in grad[base..base + h * h].iter_mut().zip(dwr.iter()) {
                *g += d;
            }
            for (g, d) in grad[base + h * h..base + 2 * h * h].iter_mut().zip(dwi.iter()) {
                *g += d;
            }
        }
        let (dxr, dxi) = self.mix_modes(&dyr, &dyi, off, m, true);
        let d_lines_in = dxr.dot(&dft.fwd_cos) + dxi.dot(&dft.fwd_sin);
        self.from_lines(d_lines_in, axis)
    }

    /// Per-mode complex channel mixing on `(H·a, m)` spectra. With
    /// `adjoint`, applies the conjugate transpose used by the backward pass.
    fn mix_modes(&self, xr: &Array2<f64>, xi: &Array2<f64>, off: usize, m: usize, adjoint: bool) -> (Array2<f64>, Array2<f64>) {
        let h = self.config.hidden;
        let a = xr.nrows() / h;
        let xr3 = xr.view().into_shape_with_order((h, a, m)).expect("contiguous");
        let xi3 = xi.view().into_shape_with_order((h, a, m)).expect("contiguous");
        let mut yr = Array3::<f64>::zeros((h, a, m));
        let mut yi = Array3::<f64>::zeros((h, a, m));
        for k in 0..m {
            let base = off + 2 * k * h * h;
            let wr = self.mat(base, h, h);
            let wi = self.mat(base + h * h, h, h);
            let (pr, pi) = (xr3.slice(s![.., .., k]), xi3.slice(s![.., .., k]));
            let (r, i) = if adjoint {
                (wr.t().dot(&pr) + wi.t().dot(&pi), wr.t().dot(&pi) - wi.t().dot(&pr))
            } else {
                (wr.dot(&pr) - wi.dot(&pi), wr.dot(&pi) + wi.dot(&pr))
            };
            yr.slice_mut(s![.., .., k]).assign(&r);
            yi.slice_mut(s![.., .., k]).assign(&i);
        }
        (yr.into_shape_with_order((h * a, m)).expect("contiguous"), yi.into_shape_with_order((h * a, m)).expect("contiguous"))
    }

    /// `(H, N)` to `(H·a, b)` with the transform axis last.
    fn to_lines(&self, z: &Array2<f64>, axis: Axis) -> (Array2<f64>, &TruncatedDft) {
        let (nx, ny) = self.config.patch;
        let h = z.nrows();
        let z3 = z.view().into_shape_with_order((h, ny, nx)).expect("contiguous");
        if axis == Axis(2) {
            (z3.to_owned().into_shape_with_order((h * ny, nx)).expect("contiguous"), &self.dft_x)
        } else {
            let t = z3.permuted_axes([0, 2, 1]).as_standard_layout().into_owned();
            (t.into_shape_with_order((h * nx, ny)).expect("contiguous"), &self.dft_y)
        }
    }

    fn from_lines(&self, lines: Array2<f64>, axis: Axis) -> Array2<f64> {
        let (nx, ny) = self.config.patch;
        let h = self.config.hidden;
        if axis == Axis(2) {
            lines.into_shape_with_order((h, ny * nx)).expect("contiguous")
        } else {
            let t = lines.into_shape_with_order((h, nx, ny)).expect("contiguous");
            t.permuted_axes([0, 2, 1]).as_standard_layout().into_owned().into_shape_with_order((h, ny * nx)).expect("contiguous")
        }
    }

    /// Gradients of `Σ d_out ⊙ output` with respect to the parameters and
    /// the input.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array3<f64>) -> (Vec<f64>, Array3<f64>) {
        let (nx, ny) = self.config.patch;
        let h = self.config.hidden;
        let n = self.n_points();
        let no = self.config.n_out;
        let mut grad = vec![0.0; self.layout.total];
        let d_out = d_out.as_standard_layout().into_owned().into_shape_with_order((no, n)).expect("contiguous");

        add_into(&mut grad, self.layout.proj_w, d_out.dot(&cache.last.t()).view());
        add_into(&mut grad, self.layout.proj_b, d_out.sum_axis(Axis(1)).insert_axis(Axis(1)).view());
        let mut dz = self.mat(self.layout.proj_w, no, h).t().dot(&d_out);

        for (l, c) in self.layout.layers.iter().zip(&cache.layers).rev() {
            let da2 = &dz * &c.a2.mapv(gelu_grad);
            add_into(&mut grad, l.w2, da2.dot(&c.h1.t()).view());
            add_into(&mut grad, l.b2, da2.sum_axis(Axis(1)).insert_axis(Axis(1)).view());
            let dh1 = self.mat(l.w2, h, h).t().dot(&da2);
            let da1 = dh1 * c.a1.mapv(gelu_grad);
            add_into(&mut grad, l.w1, da1.dot(&c.k.t()).view());
            add_into(&mut grad, l.b1, da1.sum_axis(Axis(1)).insert_axis(Axis(1)).view());
            let dk = self.mat(l.w1, h, h).t().dot(&da1);
            let dzx = self.spectral_backward(&dk, &c.sx, l.spec_x, Axis(2), &mut grad);
            let dzy = self.spectral_backward(&dk, &c.sy, l.spec_y, Axis(1), &mut grad);
            dz = dz + dzx + dzy;
        }

        add_into(&mut grad, self.layout.lift_w, dz.dot(&cache.input.t()).view());
        add_into(&mut grad, self.layout.lift_b, dz.sum_axis(Axis(1)).insert_axis(Axis(1)).view());
        let dx = self.mat(self.layout.lift_w, h, INPUT_CHANNELS).t().dot(&dz);
        (grad, dx.into_shape_with_order((INPUT_CHANNELS, ny, nx)).expect("contiguous"))
    }

    /// Spectral operator `K(z)` of one layer on `(H, N)` activations.
    pub fn kernel(&self, layer: usize, z: &Array2<f64>) -> Array2<f64> {
        let l = &self.layout.layers[layer];
        self.spectral(z, l.spec_x, Axis(2)).0 + self.spectral(z, l.spec_y, Axis(1)).0
    }

    /// Mutable view of one spectral weight block `[re|im]` for a mode.
    pub fn spectral_weight_mut(&mut self, layer: usize, axis_y: bool, mode: usize, imag: bool) -> ArrayViewMut2<'_, f64> {
        let h = self.config.hidden;
        let l = &self.layout.layers[layer];
        let off = if axis_y { l.spec_y } else { l.spec_x } + (2 * mode + imag as usize) * h * h;
        ArrayViewMut2::from_shape((h, h), &mut self.params[off..off + h * h]).expect("layout")
    }
}

fn add_into(grad: &mut [f64], off: usize, g: ArrayView2<'_, f64>) {
    for (dst, v) in grad[off..off + g.len()].iter_mut().zip(g.iter()) {
        *dst += v;
    }
}
