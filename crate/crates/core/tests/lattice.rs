use proptest::prelude::*;
use qmmm::lattice::{
    build_reference, decompose, stencil, weighted_seminorm, DefectKind, Displacement, LatticeSpec, Region,
};
use qmmm::Error;

fn brute_count(radius: f64) -> usize {
    let s3 = 3f64.sqrt() / 2.0;
    let m = radius.ceil() as i64 + 2;
    let mut n = 0;
    for i in -m..=m {
        for j in -m..=m {
            let (x, y) = (i as f64 + 0.5 * j as f64, s3 * j as f64);
            if (x * x + y * y).sqrt() <= radius + 1e-9 {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn perfect_ball_counts_match_brute_force() {
    for r in [1.0, 2.5, 3.0, 5.7, 10.0] {
        let c = build_reference(LatticeSpec::triangular(), r, DefectKind::None, 0.0).unwrap();
        assert_eq!(c.len(), brute_count(r), "radius {r}");
    }
    let c = build_reference(LatticeSpec::triangular(), 3.0, DefectKind::None, 0.0).unwrap();
    assert_eq!(c.len(), 37);
}

#[test]
fn point_defects_remove_sites() {
    let spec = LatticeSpec::triangular();
    let n = brute_count(6.0);
    let v = build_reference(spec, 6.0, DefectKind::Vacancy, 0.5).unwrap();
    assert_eq!(v.len(), n - 1);
    assert!(v.site_of([0, 0]).is_none());
    let d = build_reference(spec, 6.0, DefectKind::Divacancy, 1.6).unwrap();
    assert_eq!(d.len(), n - 2);
    let i = build_reference(spec, 6.0, DefectKind::Interstitial, 1.0).unwrap();
    assert_eq!(i.len(), n + 1);
    assert!(i.lattice_coords(i.len() - 1).is_none());
}

#[test]
fn domain_inside_defect_core_is_rejected() {
    let r = build_reference(LatticeSpec::triangular(), 1.0, DefectKind::Vacancy, 1.5);
    assert!(matches!(r, Err(Error::InvalidGeometry(_))));
    let r = build_reference(LatticeSpec::triangular(), 5.0, DefectKind::Divacancy, 0.5);
    assert!(matches!(r, Err(Error::InvalidGeometry(_))));
}

#[test]
fn site_ids_are_stable_and_invertible() {
    let a = build_reference(LatticeSpec::triangular(), 7.0, DefectKind::Vacancy, 0.5).unwrap();
    let b = build_reference(LatticeSpec::triangular(), 7.0, DefectKind::Vacancy, 0.5).unwrap();
    assert_eq!(a.sites(), b.sites());
    for id in 0..a.len() {
        let n = a.lattice_coords(id).unwrap();
        assert_eq!(a.site_of(n), Some(id));
        assert_eq!(a.site_at(a.position(id)), Some(id));
    }
}

#[test]
fn decomposition_qm_core_matches_ball() {
    let c = build_reference(LatticeSpec::triangular(), 8.0, DefectKind::None, 0.0).unwrap();
    let d = decompose(&c, 3.0, 6.0, 1.0).unwrap();
    assert_eq!(d.counts().qm, brute_count(3.0));
    assert_eq!(d.counts().qm + d.counts().mm, brute_count(6.0));
    assert_eq!(d.counts().buffer, brute_count(4.0) - brute_count(3.0));
}

#[test]
fn invalid_decompositions_are_rejected() {
    let c = build_reference(LatticeSpec::triangular(), 8.0, DefectKind::Vacancy, 0.5).unwrap();
    for (qm, mm, buf) in [(4.0, 4.0, 1.0), (1.2, 5.0, 1.0), (3.0, 7.5, 1.0), (3.0, 5.0, 0.0)] {
        assert!(
            matches!(decompose(&c, qm, mm, buf), Err(Error::InvalidDecomposition(_))),
            "({qm}, {mm}, {buf})"
        );
    }
}

#[test]
fn stencil_neighbour_counts() {
    let c = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::None, 0.0).unwrap();
    let o = c.site_of([0, 0]).unwrap();
    assert_eq!(stencil(&c, o, 1.1).len(), 6);
    assert_eq!(stencil(&c, o, 1.9).len(), 12);
    let v = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::Vacancy, 0.5).unwrap();
    let nb = v.site_of([1, 0]).unwrap();
    assert_eq!(stencil(&v, nb, 1.1).len(), 5);
}

fn direct_seminorm(c: &qmmm::lattice::ReferenceConfig, u: &Displacement, gamma: f64) -> f64 {
    let cut = 40.0 / gamma;
    let mut s = 0.0;
    for l in 0..c.len() {
        for k in 0..c.len() {
            let (x, y) = (c.position(l), c.position(k));
            let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            if k == l || r > cut {
                continue;
            }
            let d2: f64 = u.site(k).iter().zip(u.site(l)).map(|(a, b)| (a - b).powi(2)).sum();
            s += (-2.0 * gamma * r).exp() * d2;
        }
    }
    s.sqrt()
}

#[test]
fn seminorm_of_constant_is_zero_and_of_identity_matches_double_sum() {
    let c = build_reference(LatticeSpec::triangular(), 4.0, DefectKind::None, 0.0).unwrap();
    let constant = Displacement::from_values(2, [0.3, -1.2].repeat(c.len())).unwrap();
    assert!(weighted_seminorm(&constant, &c, 1.0, None).unwrap() < 1e-14);
    let ident = Displacement::from_values(2, c.sites().iter().flat_map(|x| *x).collect()).unwrap();
    for gamma in [0.5, 1.0, 2.0] {
        let got = weighted_seminorm(&ident, &c, gamma, None).unwrap();
        let want = direct_seminorm(&c, &ident, gamma);
        assert!((got - want).abs() <= 1e-12 * want, "gamma {gamma}: {got} vs {want}");
    }
}

#[test]
fn seminorm_rejects_nonpositive_gamma() {
    let c = build_reference(LatticeSpec::triangular(), 3.0, DefectKind::None, 0.0).unwrap();
    let u = Displacement::zeros(c.len(), 1);
    assert!(matches!(weighted_seminorm(&u, &c, 0.0, None), Err(Error::InvalidParameter(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn regions_partition_the_domain(qm in 2.0f64..5.0, gap in 0.3f64..3.0, f in 0.0f64..1.0) {
        // keeps R_QM > R_def + R_BUF
        let buf = 0.5 + f * (qm - 1.1).min(1.5);
        let c = build_reference(LatticeSpec::triangular(), 12.0, DefectKind::Vacancy, 0.5).unwrap();
        let d = decompose(&c, qm, qm + gap, buf).unwrap();
        let k = d.counts();
        prop_assert_eq!(k.qm + k.mm + k.ff, c.len());
        for id in 0..c.len() {
            let r = c.radius_of(id);
            let want = if r <= qm + 1e-9 { Region::Qm } else if r <= qm + gap + 1e-9 { Region::Mm } else { Region::Ff };
            prop_assert_eq!(d.label(id), want);
        }
        for &b in d.buffer_ids() {
            prop_assert!(d.label(b) != Region::Qm);
            prop_assert!(c.radius_of(b) <= qm + buf + 1e-9);
        }
    }

    #[test]
    fn seminorm_is_homogeneous(vals in prop::collection::vec(-1.0f64..1.0, 19), alpha in -3.0f64..3.0, gamma in 0.3f64..2.0) {
        let c = build_reference(LatticeSpec::triangular(), 2.0, DefectKind::None, 0.0).unwrap();
        prop_assume!(c.len() == vals.len());
        let u = Displacement::from_values(1, vals).unwrap();
        let a = weighted_seminorm(&u.scaled(alpha), &c, gamma, None).unwrap();
        let b = weighted_seminorm(&u, &c, gamma, None).unwrap();
        prop_assert!((a - alpha.abs() * b).abs() <= 1e-12 * (1.0 + b));
    }

    #[test]
    fn seminorm_is_translation_invariant(vals in prop::collection::vec(-1.0f64..1.0, 19), shift in -5.0f64..5.0) {
        let c = build_reference(LatticeSpec::triangular(), 2.0, DefectKind::None, 0.0).unwrap();
        let u = Displacement::from_values(1, vals.clone()).unwrap();
        let v = Displacement::from_values(1, vals.iter().map(|x| x + shift).collect()).unwrap();
        let a = weighted_seminorm(&u, &c, 1.0, None).unwrap();
        let b = weighted_seminorm(&v, &c, 1.0, None).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }
}
