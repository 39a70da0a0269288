//! Invertible 1×1 convolutions: plain matrix, PLU and QR parameterizations.

use rand::Rng;

use super::layer::{normal_tensor, random_rotation, Bijection, TapeLogdet};
use super::params::{ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::{conv2d, Boundary, Filter, Padding, Tensor4};
use crate::error::{Error, Result};
use crate::numerics::{householder_orthogonal, lu_slogdet, Lu, RMatrix};

/// Plain matrices with `|det W|` below this are rejected.
pub const MIN_ABS_DET: f64 = 1e-30;

#[derive(Clone, Debug)]
pub enum Inv1x1Kind {
    Plain {
        w: ParamId,
    },
    /// `W = P·L·(U + diag(sign·exp(log_s)))`, `L` unit lower, `U` strictly upper.
    Plu {
        p: ParamId,
        l: ParamId,
        u: ParamId,
        sign: ParamId,
        log_s: ParamId,
    },
    /// `W = Q·(R + diag(sign·exp(log_s)))`, `Q` a product of reflections, `R` strictly upper.
    Qr {
        vectors: ParamId,
        r: ParamId,
        sign: ParamId,
        log_s: ParamId,
    },
}

#[derive(Clone, Debug)]
pub struct Inv1x1 {
    pub channels: usize,
    pub kind: Inv1x1Kind,
}

/// Unpacked QR parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct QrParams {
    pub vectors: Vec<Vec<f64>>,
    pub r: RMatrix,
    pub sign: Vec<f64>,
    pub log_s: Vec<f64>,
}

/// Unpacked PLU parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PluParams {
    pub p: RMatrix,
    pub l: RMatrix,
    pub u: RMatrix,
    pub sign: Vec<f64>,
    pub log_s: Vec<f64>,
}

fn scaled_diag(sign: &[f64], log_s: &[f64]) -> RMatrix {
    RMatrix::from_diag(&sign.iter().zip(log_s).map(|(s, l)| s * l.exp()).collect::<Vec<_>>())
}

fn strict_upper(m: &RMatrix) -> RMatrix {
    RMatrix::from_fn(m.rows(), m.cols(), |i, j| if j > i { m[(i, j)] } else { 0.0 })
}

fn strict_lower(m: &RMatrix) -> RMatrix {
    RMatrix::from_fn(m.rows(), m.cols(), |i, j| if j < i { m[(i, j)] } else { 0.0 })
}

/// `Q(R + diag(s))`; only the strictly upper part of `r` is used.
pub fn qr_compose(p: &QrParams) -> Result<RMatrix> {
    let c = p.sign.len();
    let q = householder_orthogonal(&p.vectors, c)?;
    let mut upper = strict_upper(&p.r);
    let d = scaled_diag(&p.sign, &p.log_s);
    for i in 0..c {
        upper[(i, i)] = d[(i, i)];
    }
    q.matmul(&upper)
}

/// `P·L·(U + diag(s))`; only the strictly triangular parts of `l` and `u` are used.
pub fn plu_compose(p: &PluParams) -> Result<RMatrix> {
    let c = p.sign.len();
    let mut l = strict_lower(&p.l);
    let mut u = strict_upper(&p.u);
    let d = scaled_diag(&p.sign, &p.log_s);
    for i in 0..c {
        l[(i, i)] = 1.0;
        u[(i, i)] = d[(i, i)];
    }
    p.p.matmul(&l)?.matmul(&u)
}

fn mask(c: usize, keep: impl Fn(usize, usize) -> bool) -> Tensor {
    Tensor::from(RMatrix::from_fn(c, c, |i, j| if keep(i, j) { 1.0 } else { 0.0 }))
}

fn as_matrix(t: &Tensor) -> RMatrix {
    t.to_matrix().expect("stored as a matrix")
}

impl Inv1x1 {
    /// Unconstrained matrix initialized to a random rotation.
    pub fn plain(store: &mut ParamStore, prefix: &str, c: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{prefix}.w"), Tensor::from(random_rotation(c, rng)), true);
        Inv1x1 { channels: c, kind: Inv1x1Kind::Plain { w } }
    }

    /// PLU factors of a random rotation; `P` stays fixed.
    pub fn plu(store: &mut ParamStore, prefix: &str, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let (p, l, u) = Lu::factor(&random_rotation(c, rng))?.factors()?;
        let diag: Vec<f64> = (0..c).map(|i| u[(i, i)]).collect();
        let kind = Inv1x1Kind::Plu {
            p: store.add(format!("{prefix}.p"), Tensor::from(p), false),
            l: store.add(format!("{prefix}.l"), Tensor::from(strict_lower(&l)), true),
            u: store.add(format!("{prefix}.u"), Tensor::from(strict_upper(&u)), true),
            sign: store.add(format!("{prefix}.sign"), Tensor::vector(diag.iter().map(|d| d.signum()).collect()), false),
            log_s: store.add(
                format!("{prefix}.log_s"),
                Tensor::vector(diag.iter().map(|d| d.abs().ln()).collect()),
                true,
            ),
        };
        Ok(Inv1x1 { channels: c, kind })
    }

    /// `reflections` random Householder vectors, `R = 0`, `s = 1`.
    pub fn qr(store: &mut ParamStore, prefix: &str, c: usize, reflections: usize, rng: &mut impl Rng) -> Self {
        let kind = Inv1x1Kind::Qr {
            vectors: store.add(format!("{prefix}.vectors"), normal_tensor(&[reflections, c], 1.0, rng), true),
            r: store.add(format!("{prefix}.r"), Tensor::zeros(&[c, c]), true),
            sign: store.add(format!("{prefix}.sign"), Tensor::full(&[c], 1.0), false),
            log_s: store.add(format!("{prefix}.log_s"), Tensor::zeros(&[c]), true),
        };
        Inv1x1 { channels: c, kind }
    }

    pub fn qr_params(&self, store: &ParamStore) -> Option<QrParams> {
        let Inv1x1Kind::Qr { vectors, r, sign, log_s } = &self.kind else { return None };
        let v = store.get(*vectors);
        let c = self.channels;
        Some(QrParams {
            vectors: v.data().chunks(c.max(1)).map(<[f64]>::to_vec).collect(),
            r: as_matrix(store.get(*r)),
            sign: store.get(*sign).data().to_vec(),
            log_s: store.get(*log_s).data().to_vec(),
        })
    }

    pub fn plu_params(&self, store: &ParamStore) -> Option<PluParams> {
        let Inv1x1Kind::Plu { p, l, u, sign, log_s } = &self.kind else { return None };
        Some(PluParams {
            p: as_matrix(store.get(*p)),
            l: as_matrix(store.get(*l)),
            u: as_matrix(store.get(*u)),
            sign: store.get(*sign).data().to_vec(),
            log_s: store.get(*log_s).data().to_vec(),
        })
    }

    /// Records `W` and `log |det W|`.
    pub fn record_weight(&self, tape: &mut Tape, p: &[Var]) -> Result<(Var, Var)> {
        let c = self.channels;
        match &self.kind {
            Inv1x1Kind::Plain { w } => {
                let ld = tape.log_abs_det(p[w.0])?;
                Ok((p[w.0], ld))
            }
            Inv1x1Kind::Plu { p: perm, l, u, sign, log_s } => {
                let lower = tape.constant(mask(c, |i, j| j < i));
                let upper = tape.constant(mask(c, |i, j| j > i));
                let eye = tape.constant(Tensor::from(RMatrix::identity(c)));
                let lm = tape.mul(p[l.0], lower)?;
                let lm = tape.add(lm, eye)?;
                let s = tape.exp(p[log_s.0])?;
                let s = tape.mul(s, p[sign.0])?;
                let d = tape.diag_embed(s)?;
                let um = tape.mul(p[u.0], upper)?;
                let um = tape.add(um, d)?;
                let lu = tape.matmul(lm, um)?;
                let w = tape.matmul(p[perm.0], lu)?;
                let ld = tape.sum(p[log_s.0])?;
                Ok((w, ld))
            }
            Inv1x1Kind::Qr { vectors, r, sign, log_s } => {
                let upper = tape.constant(mask(c, |i, j| j > i));
                let q = tape.householder(p[vectors.0])?;
                let s = tape.exp(p[log_s.0])?;
                let s = tape.mul(s, p[sign.0])?;
                let d = tape.diag_embed(s)?;
                let rm = tape.mul(p[r.0], upper)?;
                let rm = tape.add(rm, d)?;
                let w = tape.matmul(q, rm)?;
                let ld = tape.sum(p[log_s.0])?;
                Ok((w, ld))
            }
        }
    }

    /// Composed `W` and the reported `log |det W|`.
    pub fn weight(&self, store: &ParamStore) -> Result<(RMatrix, f64)> {
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let (w, ld) = self.record_weight(&mut tape, &p)?;
        Ok((tape.value(w).to_matrix()?, tape.value(ld).item()?))
    }
}

impl Bijection for Inv1x1 {
    fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, TapeLogdet)> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!("1x1 convolution expects {} channels, got {c}", self.channels)));
        }
        let (wm, ld) = self.record_weight(tape, p)?;
        let filt = tape.reshape(wm, &[c, c, 1, 1])?;
        let y = tape.conv2d(x, filt, None, Padding::NONE, Boundary::Zero)?;
        let ld = tape.scale(ld, (h * w) as f64)?;
        Ok((y, TapeLogdet::Shared(ld)))
    }

    fn inverse(&self, store: &ParamStore, y: &Tensor4) -> Result<(Tensor4, Vec<f64>)> {
        let (n, c, h, w) = y.shape();
        if c != self.channels {
            return Err(Error::shape(format!("1x1 convolution expects {} channels, got {c}", self.channels)));
        }
        let (wm, ld) = self.weight(store)?;
        if matches!(self.kind, Inv1x1Kind::Plain { .. }) && lu_slogdet(&wm)?.log_abs < MIN_ABS_DET.ln() {
            return Err(Error::NonInvertible(format!("|det W| below {MIN_ABS_DET:e}")));
        }
        let winv = Lu::factor(&wm)?.inverse().map_err(|_| Error::NonInvertible("singular 1x1 weight".into()))?;
        let x = conv2d(y, &Filter::from_matrix(&winv), Boundary::Zero)?;
        Ok((x, vec![-((h * w) as f64) * ld; n]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::layer::Direction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_compositions() {
        let q = QrParams { vectors: vec![], r: RMatrix::zeros(3, 3), sign: vec![1.0; 3], log_s: vec![0.0; 3] };
        assert_eq!(qr_compose(&q).unwrap(), RMatrix::identity(3));
        let p = PluParams {
            p: RMatrix::identity(2),
            l: RMatrix::zeros(2, 2),
            u: RMatrix::zeros(2, 2),
            sign: vec![1.0, 1.0],
            log_s: vec![2f64.ln(), 3f64.ln()],
        };
        let w = plu_compose(&p).unwrap();
        assert!(w.max_abs_diff(&RMatrix::from_diag(&[2.0, 3.0])) < 1e-15);
        assert!((lu_slogdet(&w).unwrap().log_abs - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_weight_is_noop() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Inv1x1::qr(&mut s, "q", 2, 0, &mut rng);
        let x = Tensor4::from_fn(2, 2, 3, 3, |b, c, y, x| (b * 7 + c * 3 + y + x) as f64);
        let (y, ld) = l.apply(&s, &x, Direction::Forward).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, vec![0.0, 0.0]);
    }

    #[test]
    fn qr_determinant_is_product_of_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let l = Inv1x1::qr(&mut s, "q", 3, 3, &mut rng);
        let Inv1x1Kind::Qr { r, log_s, sign, .. } = l.kind else { unreachable!() };
        s.set(r, normal_tensor(&[3, 3], 1.0, &mut rng)).unwrap();
        s.set(log_s, normal_tensor(&[3], 0.5, &mut rng)).unwrap();
        s.set(sign, Tensor::vector(vec![1.0, -1.0, 1.0])).unwrap();
        let (w, ld) = l.weight(&s).unwrap();
        let sum: f64 = s.get(log_s).data().iter().sum();
        assert!((ld - sum).abs() < 1e-15);
        assert!((lu_slogdet(&w).unwrap().log_abs - sum).abs() < 1e-10);
        let direct = qr_compose(&l.qr_params(&s).unwrap()).unwrap();
        assert!(direct.max_abs_diff(&w) < 1e-14);
    }

    #[test]
    fn all_variants_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let layers = [
            Inv1x1::plain(&mut s, "a", 3, &mut rng),
            Inv1x1::plu(&mut s, "b", 3, &mut rng).unwrap(),
            Inv1x1::qr(&mut s, "c", 3, 2, &mut rng),
        ];
        let x = Tensor4::from_fn(2, 3, 2, 3, |_, _, _, _| rng.random_range(-1.0..1.0));
        for l in &layers {
            let (y, f) = l.apply(&s, &x, Direction::Forward).unwrap();
            let (back, i) = l.apply(&s, &y, Direction::Inverse).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-12);
            assert!((f[0] + i[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn plu_init_reproduces_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let l = Inv1x1::plu(&mut s, "p", 4, &mut rng).unwrap();
        let w = plu_compose(&l.plu_params(&s).unwrap()).unwrap();
        assert!(w.transpose().matmul(&w).unwrap().max_abs_diff(&RMatrix::identity(4)) < 1e-12);
        assert!(l.weight(&s).unwrap().1.abs() < 1e-12);
    }

    #[test]
    fn near_singular_plain_rejected() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Inv1x1::plain(&mut s, "w", 2, &mut rng);
        let Inv1x1Kind::Plain { w } = l.kind else { unreachable!() };
        s.set(w, Tensor::new(vec![2, 2], vec![1.0, 2.0, 2.0, 4.0]).unwrap()).unwrap();
        let y = Tensor4::zeros(1, 2, 2, 2);
        assert!(matches!(l.apply(&s, &y, Direction::Inverse), Err(Error::NonInvertible(_))));
    }
}
