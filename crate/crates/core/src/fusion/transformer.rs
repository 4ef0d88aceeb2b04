//! Fusion transformer: class token plus feature tokens, learned or
//! sinusoidal positions, `n_l` encoder blocks, and a linear head on the
//! transformed class token.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows, softmax_rows_backward, LnCache, Mat};
use super::{dropout_mask, DropoutMasks, EncoderVariant, FusionError, HyperParams, Mode, ParamSet, Positional, Regressor, TokenSet};
use crate::geometry::GazeAngles;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `d_model × d_model`, applied as `x·W`.
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
    /// `d_model × d_ff`
    pub w1: Mat,
    pub b1: Mat,
    /// `d_ff × d_model`
    pub w2: Mat,
    pub b2: Mat,
}

fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Mat {
    let a = 1.0 / (fan_in as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
}

impl LayerParams {
    pub fn random(hp: &HyperParams, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (hp.d_model, hp.d_ff);
        Self {
            wq: uniform(d, d, d, rng),
            wk: uniform(d, d, d, rng),
            wv: uniform(d, d, d, rng),
            wo: uniform(d, d, d, rng),
            ln1_g: Mat::from_element(1, d, 1.0),
            ln1_b: Mat::zeros(1, d),
            ln2_g: Mat::from_element(1, d, 1.0),
            ln2_b: Mat::zeros(1, d),
            w1: uniform(d, f, d, rng),
            b1: uniform(1, f, d, rng),
            w2: uniform(f, d, f, rng),
            b2: uniform(1, d, f, rng),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        for (n, m) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ] {
            f(&format!("{prefix}.{n}"), m);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        for (n, m) in [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ] {
            f(&format!("{prefix}.{n}"), m);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub hp: HyperParams,
    /// 1 × d_model, starts at zero.
    pub class_token: Mat,
    /// n_t × d_model. Fixed when the encoding is sinusoidal.
    pub positional: Mat,
    pub layers: Vec<LayerParams>,
    /// d_model × 2
    pub head_w: Mat,
    pub head_b: Mat,
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(...)`.
pub fn sinusoidal_encoding(n: usize, d: usize) -> Mat {
    Mat::from_fn(n, d, |p, j| {
        let i = (j / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl FusionParams {
    pub fn random(hp: &HyperParams, rng: &mut ChaCha8Rng) -> Result<Self, FusionError> {
        hp.validate()?;
        let d = hp.d_model;
        let positional = match hp.positional {
            Positional::Learned => uniform(hp.n_tokens, d, d, rng),
            Positional::Sinusoidal => sinusoidal_encoding(hp.n_tokens, d),
        };
        let layers = (0..hp.n_layers).map(|_| LayerParams::random(hp, rng)).collect();
        Ok(Self {
            hp: *hp,
            class_token: Mat::zeros(1, d),
            positional,
            layers,
            head_w: uniform(d, 2, d, rng),
            head_b: uniform(1, 2, d, rng),
        })
    }

    /// Every tensor zero except the output bias.
    pub fn constant(hp: &HyperParams, bias: [f64; 2]) -> Result<Self, FusionError> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut p = Self::random(hp, &mut rng)?;
        p.visit_mut(&mut |_, m| m.fill(0.0));
        p.head_b = Mat::from_row_slice(1, 2, &bias);
        Ok(p)
    }

    pub fn check_shapes(&self) -> Result<(), FusionError> {
        let hp = &self.hp;
        hp.validate()?;
        let (d, f) = (hp.d_model, hp.d_ff);
        if self.positional.shape() != (hp.n_tokens, d) {
            return Err(FusionError::ShapeMismatch("positional encoding does not match n_t × d_model".into()));
        }
        let mut want: Vec<(String, (usize, usize))> = vec![("class_token".into(), (1, d))];
        if hp.positional == Positional::Learned {
            want.push(("positional".into(), (hp.n_tokens, d)));
        }
        for l in 0..hp.n_layers {
            for (n, s) in [
                ("wq", (d, d)),
                ("wk", (d, d)),
                ("wv", (d, d)),
                ("wo", (d, d)),
                ("ln1_g", (1, d)),
                ("ln1_b", (1, d)),
                ("ln2_g", (1, d)),
                ("ln2_b", (1, d)),
                ("w1", (d, f)),
                ("b1", (1, f)),
                ("w2", (f, d)),
                ("b2", (1, d)),
            ] {
                want.push((format!("layers.{l}.{n}"), s));
            }
        }
        want.push(("head_w".into(), (d, 2)));
        want.push(("head_b".into(), (1, 2)));
        let got = self.names();
        if got != want {
            return Err(FusionError::ShapeMismatch("parameter tensors do not match hyperparameters".into()));
        }
        Ok(())
    }
}

// A sinusoidal encoding is a constant, not a parameter.
impl ParamSet for FusionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Mat)) {
        f("class_token", &self.class_token);
        if self.hp.positional == Positional::Learned {
            f("positional", &self.positional);
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("layers.{i}"), f);
        }
        f("head_w", &self.head_w);
        f("head_b", &self.head_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat)) {
        f("class_token", &mut self.class_token);
        if self.hp.positional == Positional::Learned {
            f("positional", &mut self.positional);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("layers.{i}"), f);
        }
        f("head_w", &mut self.head_w);
        f("head_b", &mut self.head_b);
    }
}

#[derive(Debug, Clone)]
pub struct MhsaCache {
    pub x: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// One `l × l` row-stochastic map per head.
    pub attn: Vec<Mat>,
    pub concat: Mat,
}

fn check_mhsa(x: &Mat, w: &[&Mat], n_heads: usize) -> Result<(), FusionError> {
    let d = x.ncols();
    if n_heads == 0 || d % n_heads != 0 {
        return Err(FusionError::ShapeMismatch(format!("d_model {d} not divisible by {n_heads} heads")));
    }
    for m in w {
        if m.nrows() != d || m.ncols() != d {
            return Err(FusionError::ShapeMismatch(format!(
                "projection is {}x{}, expected {d}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    Ok(())
}

/// Multi-head self-attention with cached intermediates.
pub fn mhsa_forward_cached(
    x: &Mat,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
    wo: &Mat,
    n_heads: usize,
) -> Result<(Mat, MhsaCache), FusionError> {
    check_mhsa(x, &[wq, wk, wv, wo], n_heads)?;
    let dk = x.ncols() / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x * wq;
    let k = x * wk;
    let v = x * wv;
    let mut concat = Mat::zeros(x.nrows(), x.ncols());
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = q.columns(h * dk, dk);
        let kh = k.columns(h * dk, dk);
        let vh = v.columns(h * dk, dk);
        let s = (qh * kh.transpose()) * scale;
        let a = softmax_rows(&s);
        concat.columns_mut(h * dk, dk).copy_from(&(&a * vh));
        attn.push(a);
    }
    let y = &concat * wo;
    Ok((
        y,
        MhsaCache {
            x: x.clone(),
            q,
            k,
            v,
            attn,
            concat,
        },
    ))
}

/// `MultiHead(x) = concat(head_1..head_h)·W^O`, `head_i = softmax(Q_i K_iᵀ/√d_k) V_i`.
pub fn mhsa_forward(x: &Mat, layer: &LayerParams, n_heads: usize) -> Result<Mat, FusionError> {
    Ok(mhsa_forward_cached(x, &layer.wq, &layer.wk, &layer.wv, &layer.wo, n_heads)?.0)
}

struct MhsaGrads {
    dx: Mat,
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
}

fn mhsa_backward(dy: &Mat, c: &MhsaCache, layer: &LayerParams) -> MhsaGrads {
    let n_heads = c.attn.len();
    let dk = c.x.ncols() / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let dwo = c.concat.transpose() * dy;
    let dconcat = dy * layer.wo.transpose();
    let mut dq = Mat::zeros(c.q.nrows(), c.q.ncols());
    let mut dk_m = dq.clone();
    let mut dv = dq.clone();
    for (h, a) in c.attn.iter().enumerate() {
        let cols = h * dk;
        let doh = dconcat.columns(cols, dk);
        let vh = c.v.columns(cols, dk);
        let da = doh * vh.transpose();
        dv.columns_mut(cols, dk).copy_from(&(a.transpose() * doh));
        let ds = softmax_rows_backward(a, &da) * scale;
        dq.columns_mut(cols, dk).copy_from(&(&ds * c.k.columns(cols, dk)));
        dk_m.columns_mut(cols, dk).copy_from(&(ds.transpose() * c.q.columns(cols, dk)));
    }
    let xt = c.x.transpose();
    MhsaGrads {
        dx: &dq * layer.wq.transpose() + &dk_m * layer.wk.transpose() + &dv * layer.wv.transpose(),
        wq: &xt * &dq,
        wk: &xt * &dk_m,
        wv: &xt * &dv,
        wo: dwo,
    }
}

struct FfCache {
    x: Mat,
    pre: Mat,
    act: Mat,
}

fn ff_forward(x: &Mat, layer: &LayerParams) -> (Mat, FfCache) {
    let pre = linear(x, &layer.w1, Some(&layer.b1));
    let act = pre.map(gelu);
    let y = linear(&act, &layer.w2, Some(&layer.b2));
    (y, FfCache { x: x.clone(), pre, act })
}

/// Returns `(dx, dw1, db1, dw2, db2)`.
fn ff_backward(dy: &Mat, c: &FfCache, layer: &LayerParams) -> (Mat, Mat, Mat, Mat, Mat) {
    let (dact, dw2, db2) = linear_backward(&c.act, &layer.w2, dy);
    let dpre = dact.component_mul(&c.pre.map(gelu_grad));
    let (dx, dw1, db1) = linear_backward(&c.x, &layer.w1, &dpre);
    (dx, dw1, db1, dw2, db2)
}

fn apply_mask(m: Mat, mask: Option<&Mat>) -> Mat {
    match mask {
        Some(k) => m.component_mul(k),
        None => m,
    }
}

/// Intermediates of one encoder block.
pub struct BlockCache {
    pub variant: EncoderVariant,
    pub input: Mat,
    /// Block value after the attention sub-layer.
    pub x_prime: Mat,
    /// Argument of the final layer norm (Post-LN and B2T only).
    pub final_norm_input: Option<Mat>,
    pub output: Mat,
    pub mhsa: MhsaCache,
    ln1: LnCache,
    ln2: LnCache,
    ff: FfCache,
    mask_attn: Option<Mat>,
    mask_ff: Option<Mat>,
}

/// Applies one encoder block. `masks` are the dropout multipliers after
/// attention and after the feed-forward; `None` means inference.
pub fn encoder_block_forward(
    x: &Mat,
    layer: &LayerParams,
    n_heads: usize,
    variant: EncoderVariant,
    masks: Option<(&Mat, &Mat)>,
) -> Result<(Mat, BlockCache), FusionError> {
    if layer.w1.nrows() != x.ncols() {
        return Err(FusionError::ShapeMismatch("feed-forward input width".into()));
    }
    let (ma, mf) = match masks {
        Some((a, f)) => (Some(a), Some(f)),
        None => (None, None),
    };
    for m in [ma, mf].into_iter().flatten() {
        if m.shape() != x.shape() {
            return Err(FusionError::ShapeMismatch("dropout mask shape".into()));
        }
    }
    let attn_in;
    let ln1_pre;
    match variant {
        EncoderVariant::PreLN => {
            let (a, c) = layer_norm(x, &layer.ln1_g, &layer.ln1_b);
            attn_in = a;
            ln1_pre = Some(c);
        }
        EncoderVariant::PostLN | EncoderVariant::B2T => {
            attn_in = x.clone();
            ln1_pre = None;
        }
    }
    let (m_raw, mhsa) = mhsa_forward_cached(&attn_in, &layer.wq, &layer.wk, &layer.wv, &layer.wo, n_heads)?;
    let m = apply_mask(m_raw, ma);
    let cache = match variant {
        EncoderVariant::PreLN => {
            let x_prime = x + m;
            let (b, ln2) = layer_norm(&x_prime, &layer.ln2_g, &layer.ln2_b);
            let (f_raw, ff) = ff_forward(&b, layer);
            let output = &x_prime + apply_mask(f_raw, mf);
            BlockCache {
                variant,
                input: x.clone(),
                x_prime,
                final_norm_input: None,
                output,
                mhsa,
                ln1: ln1_pre.expect("pre-LN cache"),
                ln2,
                ff,
                mask_attn: ma.cloned(),
                mask_ff: mf.cloned(),
            }
        }
        EncoderVariant::PostLN | EncoderVariant::B2T => {
            let s1 = m + x;
            let (x_prime, ln1) = layer_norm(&s1, &layer.ln1_g, &layer.ln1_b);
            let (f_raw, ff) = ff_forward(&x_prime, layer);
            let mut s2 = apply_mask(f_raw, mf) + &x_prime;
            if variant == EncoderVariant::B2T {
                s2 += x;
            }
            let (output, ln2) = layer_norm(&s2, &layer.ln2_g, &layer.ln2_b);
            BlockCache {
                variant,
                input: x.clone(),
                x_prime,
                final_norm_input: Some(s2),
                output,
                mhsa,
                ln1,
                ln2,
                ff,
                mask_attn: ma.cloned(),
                mask_ff: mf.cloned(),
            }
        }
    };
    Ok((cache.output.clone(), cache))
}

/// Returns `dx` and accumulates parameter gradients into `g`.
fn encoder_block_backward(dy: &Mat, c: &BlockCache, layer: &LayerParams, g: &mut LayerParams) -> Mat {
    let mask = |m: Mat, k: &Option<Mat>| match k {
        Some(k) => m.component_mul(k),
        None => m,
    };
    match c.variant {
        EncoderVariant::PreLN => {
            let mut dxp = dy.clone();
            let df = mask(dy.clone(), &c.mask_ff);
            let (db, dw1, db1, dw2, db2) = ff_backward(&df, &c.ff, layer);
            let (dxp2, dg2, dbeta2) = layer_norm_backward(&db, &c.ln2, &layer.ln2_g);
            dxp += dxp2;
            let mut dx = dxp.clone();
            let dm = mask(dxp, &c.mask_attn);
            let mg = mhsa_backward(&dm, &c.mhsa, layer);
            let (dx2, dg1, dbeta1) = layer_norm_backward(&mg.dx, &c.ln1, &layer.ln1_g);
            dx += dx2;
            accumulate(g, mg, dg1, dbeta1, dg2, dbeta2, dw1, db1, dw2, db2);
            dx
        }
        EncoderVariant::PostLN | EncoderVariant::B2T => {
            let (ds2, dg2, dbeta2) = layer_norm_backward(dy, &c.ln2, &layer.ln2_g);
            let mut dx = if c.variant == EncoderVariant::B2T {
                ds2.clone()
            } else {
                Mat::zeros(dy.nrows(), dy.ncols())
            };
            let df = mask(ds2.clone(), &c.mask_ff);
            let (dxp_ff, dw1, db1, dw2, db2) = ff_backward(&df, &c.ff, layer);
            let dxp = ds2 + dxp_ff;
            let (ds1, dg1, dbeta1) = layer_norm_backward(&dxp, &c.ln1, &layer.ln1_g);
            dx += &ds1;
            let dm = mask(ds1, &c.mask_attn);
            let mg = mhsa_backward(&dm, &c.mhsa, layer);
            dx += &mg.dx;
            accumulate(g, mg, dg1, dbeta1, dg2, dbeta2, dw1, db1, dw2, db2);
            dx
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    g: &mut LayerParams,
    mg: MhsaGrads,
    dg1: Mat,
    db1n: Mat,
    dg2: Mat,
    db2n: Mat,
    dw1: Mat,
    db1: Mat,
    dw2: Mat,
    db2: Mat,
) {
    g.wq += mg.wq;
    g.wk += mg.wk;
    g.wv += mg.wv;
    g.wo += mg.wo;
    g.ln1_g += dg1;
    g.ln1_b += db1n;
    g.ln2_g += dg2;
    g.ln2_b += db2n;
    g.w1 += dw1;
    g.b1 += db1;
    g.w2 += dw2;
    g.b2 += db2;
}

pub struct FusionCache {
    /// Input to the first block: class token and features plus positions.
    pub z0: Mat,
    pub blocks: Vec<BlockCache>,
    /// Transformed class token.
    pub class_out: Mat,
}

impl Regressor for FusionParams {
    type Cache = FusionCache;

    fn hyper(&self) -> &HyperParams {
        &self.hp
    }

    fn forward_cached(&self, tokens: &TokenSet, masks: Option<&DropoutMasks>) -> Result<([f64; 2], FusionCache), FusionError> {
        let hp = &self.hp;
        if tokens.count() != hp.feature_tokens() {
            return Err(FusionError::TokenCountMismatch {
                expected: hp.feature_tokens(),
                got: tokens.count(),
            });
        }
        if tokens.dim() != hp.d_model {
            return Err(FusionError::ShapeMismatch(format!(
                "token width {} vs d_model {}",
                tokens.dim(),
                hp.d_model
            )));
        }
        if let Some(m) = masks {
            if m.0.len() != 2 * self.layers.len() {
                return Err(FusionError::ShapeMismatch("dropout mask count".into()));
            }
        }
        let mut z = Mat::zeros(hp.n_tokens, hp.d_model);
        z.row_mut(0).copy_from(&self.class_token);
        z.rows_mut(1, tokens.count()).copy_from(&tokens.0);
        z += &self.positional;
        let z0 = z.clone();
        let mut blocks = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let m = masks.map(|m| (&m.0[2 * i], &m.0[2 * i + 1]));
            let (out, c) = encoder_block_forward(&z, layer, hp.n_heads, hp.variant, m)?;
            z = out;
            blocks.push(c);
        }
        let class_out = z.rows(0, 1).into_owned();
        let o = linear(&class_out, &self.head_w, Some(&self.head_b));
        Ok(([o[(0, 0)], o[(0, 1)]], FusionCache { z0, blocks, class_out }))
    }

    fn backward(&self, cache: &FusionCache, d_out: [f64; 2]) -> Self {
        let mut g = self.zeros_like();
        let dy = Mat::from_row_slice(1, 2, &d_out);
        let (dh, dw, db) = linear_backward(&cache.class_out, &self.head_w, &dy);
        g.head_w = dw;
        g.head_b = db;
        let mut dz = Mat::zeros(self.hp.n_tokens, self.hp.d_model);
        dz.row_mut(0).copy_from(&dh);
        for (i, c) in cache.blocks.iter().enumerate().rev() {
            dz = encoder_block_backward(&dz, c, &self.layers[i], &mut g.layers[i]);
        }
        if self.hp.positional == Positional::Learned {
            g.positional = dz.clone();
        }
        g.class_token = dz.rows(0, 1).into_owned();
        g
    }

    fn sample_masks(&self, rng: &mut ChaCha8Rng) -> DropoutMasks {
        let (l, d) = (self.hp.n_tokens, self.hp.d_model);
        let mut v = Vec::with_capacity(2 * self.layers.len());
        for _ in &self.layers {
            v.push(dropout_mask(l, d, self.hp.dropout_attn, rng));
            v.push(dropout_mask(l, d, self.hp.dropout_ff, rng));
        }
        DropoutMasks(v)
    }
}

/// Subject-independent gaze angles from the feature tokens.
pub fn fusion_forward(tokens: &TokenSet, params: &FusionParams, mode: Mode<'_>) -> Result<GazeAngles, FusionError> {
    params.predict(tokens, mode)
}
