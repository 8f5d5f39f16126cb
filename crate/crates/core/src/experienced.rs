//! Experienced paths and the filtration they generate.
//!
//! `e_t(ω)` records, for each `s <= t`, the coin at `s` as the map `t -> s`
//! reports it. Its images form the tilde spaces, with pushforward measures
//! and plain restriction between them.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::binomial_filtration::{check_path, full_path, Filtration, FiltrationError, Path};
use crate::prob_core::FinProbSpace;
use crate::timegrid::{arrow, GridTime, TimeArrow};

/// `e_t(ω)(s) = f_{s,t}(ω)(s)` for every grid `s` in `(0, t]`.
pub fn experienced_path<F: Filtration + ?Sized>(
    filtration: &F,
    t: GridTime,
    path: &Path,
) -> Result<Path, FiltrationError> {
    let res = filtration.resolution();
    let t = t.on_grid(res)?;
    check_path(path, t)?;
    let mut out = Path::EMPTY;
    for k in 1..=t.step() {
        let s = GridTime::new(k, res)?;
        let seen = filtration.apply(arrow(s, t)?, path);
        out = out.push(seen.bit(k as u32));
    }
    Ok(out)
}

/// Image spaces of `e_t` with pushforward measures, restricted-full maps.
#[derive(Debug, Clone)]
pub struct TildeFiltration {
    resolution: u32,
    spaces: Vec<Arc<FinProbSpace<Path>>>,
}

impl TildeFiltration {
    pub fn horizon(&self) -> GridTime {
        GridTime::new(self.spaces.len() as u64 - 1, self.resolution).expect("valid resolution")
    }
}

impl Filtration for TildeFiltration {
    fn resolution(&self) -> u32 {
        self.resolution
    }

    fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError> {
        let t = t.on_grid(self.resolution)?;
        self.spaces
            .get(t.step() as usize)
            .cloned()
            .ok_or(FiltrationError::BeyondHorizon {
                time: t,
                horizon: self.horizon(),
            })
    }

    fn apply(&self, arrow: TimeArrow, path: &Path) -> Path {
        full_path(arrow.target(), path)
    }
}

pub fn tilde_filtration<F: Filtration + ?Sized>(
    filtration: &F,
    horizon: GridTime,
) -> Result<TildeFiltration, FiltrationError> {
    let horizon = horizon.on_grid(filtration.resolution())?;
    let mut spaces = Vec::new();
    for k in 0..=horizon.step() {
        let t = GridTime::new(k, filtration.resolution())?;
        let mut image: BTreeMap<Path, f64> = BTreeMap::new();
        for (p, w) in filtration.space(t)?.iter() {
            *image.entry(experienced_path(filtration, t, p)?).or_default() += w;
        }
        spaces.push(Arc::new(FinProbSpace::new(image)?));
    }
    Ok(TildeFiltration {
        resolution: filtration.resolution(),
        spaces,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquareFailure {
    pub s: GridTime,
    pub t: GridTime,
    pub path: Path,
    /// `f~_{s,t}(e_t(ω))`.
    pub via_tilde: Path,
    /// `e_s(f_{s,t}(ω))`.
    pub via_base: Path,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NaturalityReport {
    pub squares_checked: usize,
    pub failures: Vec<SquareFailure>,
}

impl NaturalityReport {
    pub fn holds(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `f~_{s,t} ∘ e_t = e_s ∘ f_{s,t}` for all `s <= t <= horizon` and all paths,
/// rows ordered by `(s, t, path)`.
pub fn naturality_check<F: Filtration + ?Sized>(
    filtration: &F,
    horizon: GridTime,
) -> Result<NaturalityReport, FiltrationError> {
    let res = filtration.resolution();
    let horizon = horizon.on_grid(res)?;
    filtration.space(horizon)?;
    let mut report = NaturalityReport::default();
    for si in 0..=horizon.step() {
        let s = GridTime::new(si, res)?;
        for ti in si..=horizon.step() {
            let t = GridTime::new(ti, res)?;
            let a = arrow(s, t)?;
            for path in Path::all(ti as u32) {
                report.squares_checked += 1;
                let via_tilde = full_path(s, &experienced_path(filtration, t, &path)?);
                let via_base = experienced_path(filtration, s, &filtration.apply(a, &path))?;
                if via_tilde != via_base {
                    report.failures.push(SquareFailure {
                        s,
                        t,
                        path,
                        via_tilde,
                        via_base,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binomial_filtration::{
        check_functor_laws, compare_filtrations, make_drop_filtration, make_full_filtration, BernoulliParams,
    };
    use crate::prob_core::EPS_EQ;

    fn half() -> BernoulliParams {
        BernoulliParams::constant(0.5).unwrap()
    }

    fn t(s: &str) -> GridTime {
        GridTime::parse_dyadic(s).unwrap()
    }

    #[test]
    fn full_is_objective() {
        let f = make_full_filtration(3, BernoulliParams::constant(0.3).unwrap());
        for p in Path::all(8) {
            assert_eq!(experienced_path(&f, t("1"), &p).unwrap(), p);
        }
        let tilde = tilde_filtration(&f, t("1")).unwrap();
        assert!(compare_filtrations(&tilde, &f, t("1"), 0.0).unwrap().equal());
    }

    #[test]
    fn eighths_window() {
        let f = make_drop_filtration(3, half(), t("3/8"), t("5/8")).unwrap();
        for p in Path::all(8) {
            let e = experienced_path(&f, t("1"), &p).unwrap();
            let expected = Path::from_bits(p.bits() & 0b1100_0111, 8);
            assert_eq!(e, expected);
        }
        assert_eq!(
            experienced_path(&f, t("1"), &"10110101".parse().unwrap())
                .unwrap()
                .to_string(),
            "10000101"
        );
        let tilde = tilde_filtration(&f, t("1")).unwrap();
        let top = tilde.space(t("1")).unwrap();
        assert_eq!(top.len(), 32);
        assert!(top.iter().all(|(_, w)| (w - 8.0 / 256.0).abs() < 1e-15));
        assert!((top.total_mass() - 1.0).abs() < EPS_EQ);
        assert!(check_functor_laws(&tilde, t("1")).unwrap().is_filtration());
    }

    #[test]
    fn quarters_with_off_grid_window() {
        let f = make_drop_filtration(2, half(), t("3/8"), t("5/8")).unwrap();
        let e = experienced_path(&f, t("1"), &"1111".parse().unwrap()).unwrap();
        assert_eq!(e.to_string(), "1011");
    }

    #[test]
    fn horizon_zero() {
        let f = make_drop_filtration(2, half(), t("1/4"), t("1/4")).unwrap();
        let tilde = tilde_filtration(&f, t("0")).unwrap();
        assert_eq!(tilde.space(t("0")).unwrap().len(), 1);
    }

    #[test]
    fn naturality() {
        for f in [
            make_full_filtration(2, half()),
            make_drop_filtration(2, half(), t("1/4"), t("1/4")).unwrap(),
            make_drop_filtration(3, half(), t("3/8"), t("5/8")).unwrap(),
        ] {
            let r = naturality_check(&f, t("1")).unwrap();
            assert!(r.holds());
        }
    }

    struct Broken;

    impl Filtration for Broken {
        fn resolution(&self) -> u32 {
            2
        }
        fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError> {
            make_full_filtration(2, BernoulliParams::constant(0.5).unwrap()).space(t)
        }
        fn apply(&self, a: TimeArrow, path: &Path) -> Path {
            let r = full_path(a.target(), path);
            // the long arrow 0.5 <- 1 flips the coin at 0.5; composites disagree
            if a.target().step() == 2 && a.source().step() == 4 {
                r.with_bit(2, 1 - r.bit(2))
            } else {
                r
            }
        }
    }

    #[test]
    fn broken_composition_breaks_naturality() {
        let r = naturality_check(&Broken, t("1")).unwrap();
        assert!(!r.holds());
        let first = &r.failures[0];
        assert_eq!((first.s, first.t), (t("3/4"), t("1")));
        assert!(r.failures.iter().all(|f| f.t == t("1")));
    }
}
