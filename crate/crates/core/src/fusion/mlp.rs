//! MLP replacement for the fusion transformer. The feature tokens are
//! flattened in order (no class token, no positions) and pushed through
//! `dropout → linear → LN → GELU → dropout → linear → LN → dropout → linear`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, LnCache, Mat};
use super::{dropout_mask, DropoutMasks, FusionError, HyperParams, ParamSet, Regressor, TokenSet};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hp: HyperParams,
    /// `(n_t − 1)·d_model × d_ff`
    pub l1_w: Mat,
    pub l1_b: Mat,
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    /// `d_ff × d_ff`
    pub l2_w: Mat,
    pub l2_b: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
    /// `d_ff × 2`
    pub l3_w: Mat,
    pub l3_b: Mat,
}

impl MlpParams {
    pub fn input_width(hp: &HyperParams) -> usize {
        hp.feature_tokens() * hp.d_model
    }

    pub fn random(hp: &HyperParams, rng: &mut ChaCha8Rng) -> Result<Self, FusionError> {
        hp.validate()?;
        let n = Self::input_width(hp);
        let f = hp.d_ff;
        let mut u = |r: usize, c: usize, fan: usize| {
            let a = 1.0 / (fan as f64).sqrt();
            Mat::from_fn(r, c, |_, _| rng.random_range(-a..=a))
        };
        Ok(Self {
            hp: *hp,
            l1_w: u(n, f, n),
            l1_b: u(1, f, n),
            ln1_g: Mat::from_element(1, f, 1.0),
            ln1_b: Mat::zeros(1, f),
            l2_w: u(f, f, f),
            l2_b: u(1, f, f),
            ln2_g: Mat::from_element(1, f, 1.0),
            ln2_b: Mat::zeros(1, f),
            l3_w: u(f, 2, f),
            l3_b: u(1, 2, f),
        })
    }

    pub fn constant(hp: &HyperParams, bias: [f64; 2]) -> Result<Self, FusionError> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut p = Self::random(hp, &mut rng)?;
        p.visit_mut(&mut |_, m| m.fill(0.0));
        p.l3_b = Mat::from_row_slice(1, 2, &bias);
        Ok(p)
    }
}

impl ParamSet for MlpParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Mat)) {
        f("l1_w", &self.l1_w);
        f("l1_b", &self.l1_b);
        f("ln1_g", &self.ln1_g);
        f("ln1_b", &self.ln1_b);
        f("l2_w", &self.l2_w);
        f("l2_b", &self.l2_b);
        f("ln2_g", &self.ln2_g);
        f("ln2_b", &self.ln2_b);
        f("l3_w", &self.l3_w);
        f("l3_b", &self.l3_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat)) {
        f("l1_w", &mut self.l1_w);
        f("l1_b", &mut self.l1_b);
        f("ln1_g", &mut self.ln1_g);
        f("ln1_b", &mut self.ln1_b);
        f("l2_w", &mut self.l2_w);
        f("l2_b", &mut self.l2_b);
        f("ln2_g", &mut self.ln2_g);
        f("ln2_b", &mut self.ln2_b);
        f("l3_w", &mut self.l3_w);
        f("l3_b", &mut self.l3_b);
    }
}

pub struct MlpCache {
    x0: Mat,
    n1_pre: Mat,
    ln1: LnCache,
    a1: Mat,
    ln2: LnCache,
    n2: Mat,
    masks: Option<DropoutMasks>,
}

impl Regressor for MlpParams {
    type Cache = MlpCache;

    fn hyper(&self) -> &HyperParams {
        &self.hp
    }

    fn forward_cached(&self, tokens: &TokenSet, masks: Option<&DropoutMasks>) -> Result<([f64; 2], MlpCache), FusionError> {
        let hp = &self.hp;
        if tokens.count() != hp.feature_tokens() {
            return Err(FusionError::TokenCountMismatch {
                expected: hp.feature_tokens(),
                got: tokens.count(),
            });
        }
        if tokens.dim() != hp.d_model {
            return Err(FusionError::ShapeMismatch(format!("token width {} vs d_model {}", tokens.dim(), hp.d_model)));
        }
        let n = Self::input_width(hp);
        if let Some(m) = masks {
            let ok = m.0.len() == 3 && m.0[0].shape() == (1, n) && m.0[1].shape() == (1, hp.d_ff) && m.0[2].shape() == (1, hp.d_ff);
            if !ok {
                return Err(FusionError::ShapeMismatch("dropout masks".into()));
            }
        }
        let mask = |v: Mat, i: usize| match masks {
            Some(m) => v.component_mul(&m.0[i]),
            None => v,
        };
        // row-major flattening: token order matters
        let flat = Mat::from_row_iterator(1, n, tokens.0.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
        let x0 = mask(flat, 0);
        let h1 = linear(&x0, &self.l1_w, Some(&self.l1_b));
        let (n1, ln1) = layer_norm(&h1, &self.ln1_g, &self.ln1_b);
        let a1 = mask(n1.map(gelu), 1);
        let h2 = linear(&a1, &self.l2_w, Some(&self.l2_b));
        let (n2, ln2) = layer_norm(&h2, &self.ln2_g, &self.ln2_b);
        let n2 = mask(n2, 2);
        let o = linear(&n2, &self.l3_w, Some(&self.l3_b));
        Ok((
            [o[(0, 0)], o[(0, 1)]],
            MlpCache {
                x0,
                n1_pre: n1,
                ln1,
                a1,
                ln2,
                n2,
                masks: masks.cloned(),
            },
        ))
    }

    fn backward(&self, c: &MlpCache, d_out: [f64; 2]) -> Self {
        let mut g = self.zeros_like();
        let mask = |v: Mat, i: usize| match &c.masks {
            Some(m) => v.component_mul(&m.0[i]),
            None => v,
        };
        let dy = Mat::from_row_slice(1, 2, &d_out);
        let (dn2, dw3, db3) = linear_backward(&c.n2, &self.l3_w, &dy);
        let dn2 = mask(dn2, 2);
        let (dh2, dg2, dbn2) = layer_norm_backward(&dn2, &c.ln2, &self.ln2_g);
        let (da1, dw2, db2) = linear_backward(&c.a1, &self.l2_w, &dh2);
        let da1 = mask(da1, 1);
        let dn1 = da1.component_mul(&c.n1_pre.map(gelu_grad));
        let (dh1, dg1, dbn1) = layer_norm_backward(&dn1, &c.ln1, &self.ln1_g);
        let (_, dw1, db1) = linear_backward(&c.x0, &self.l1_w, &dh1);
        g.l1_w = dw1;
        g.l1_b = db1;
        g.ln1_g = dg1;
        g.ln1_b = dbn1;
        g.l2_w = dw2;
        g.l2_b = db2;
        g.ln2_g = dg2;
        g.ln2_b = dbn2;
        g.l3_w = dw3;
        g.l3_b = db3;
        g
    }

    fn sample_masks(&self, rng: &mut ChaCha8Rng) -> DropoutMasks {
        let p = self.hp.dropout_ff;
        DropoutMasks(vec![
            dropout_mask(1, Self::input_width(&self.hp), p, rng),
            dropout_mask(1, self.hp.d_ff, p, rng),
            dropout_mask(1, self.hp.d_ff, p, rng),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{EncoderVariant, Mode};
    use rand::SeedableRng;

    #[test]
    fn constant_output_and_determinism() {
        let hp = HyperParams::toy(EncoderVariant::B2T);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = TokenSet(Mat::from_fn(4, 16, |_, _| rng.random_range(-1.0..1.0)));
        let c = MlpParams::constant(&hp, [0.3, 0.1]).unwrap();
        let g = c.predict(&t, Mode::Inference).unwrap();
        assert_eq!((g.pitch, g.yaw), (0.3, 0.1));
        let p = MlpParams::random(&hp, &mut rng).unwrap();
        let a = p.predict(&t, Mode::Inference).unwrap();
        let b = p.predict(&t, Mode::Inference).unwrap();
        assert_eq!(a, b);
        let swapped = p.predict(&t.permuted(&[1, 0, 2, 3]), Mode::Inference).unwrap();
        assert_ne!(a, swapped);
    }
}
