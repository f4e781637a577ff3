use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reviewmine_core::evaluate::{ari, nmi, NmiNormalization};

// Mutual information from joint and marginal probability tables.
fn nmi_oracle(u: &[u32], v: &[u32]) -> f64 {
    let n = u.len() as f64;
    let mut pu: BTreeMap<u32, f64> = BTreeMap::new();
    let mut pv: BTreeMap<u32, f64> = BTreeMap::new();
    let mut puv: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (&a, &b) in u.iter().zip(v) {
        *pu.entry(a).or_default() += 1.0 / n;
        *pv.entry(b).or_default() += 1.0 / n;
        *puv.entry((a, b)).or_default() += 1.0 / n;
    }
    let h = |m: &BTreeMap<u32, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let (hu, hv) = (h(&pu), h(&pv));
    if hu == 0.0 && hv == 0.0 {
        return 1.0;
    }
    if hu == 0.0 || hv == 0.0 {
        return 0.0;
    }
    let mi: f64 = puv.iter().map(|(&(a, b), &p)| p * (p / (pu[&a] * pv[&b])).ln()).sum();
    mi / ((hu + hv) / 2.0)
}

// Rand-style pair agreement counts over every unordered pair.
fn ari_oracle(u: &[u32], v: &[u32]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            match (u[i] == u[j], v[i] == v[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let den = (a + b) * (b + d) + (a + c) * (c + d);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / den
}

fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let k = rng.gen_range(1..=n as u32);
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

#[test]
fn nmi_and_ari_match_brute_force() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=12);
        let u = random_partition(&mut rng, n);
        let v = random_partition(&mut rng, n);
        let got = nmi(&u, &v, NmiNormalization::Arithmetic).unwrap();
        assert!((got - nmi_oracle(&u, &v)).abs() < 1e-9, "seed {seed}: nmi {got}");
        let got = ari(&u, &v).unwrap();
        assert!((got - ari_oracle(&u, &v)).abs() < 1e-9, "seed {seed}: ari {got}");
    }
}

#[test]
fn metrics_ignore_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let u = random_partition(&mut rng, 12);
        let v = random_partition(&mut rng, 12);
        let relabeled: Vec<u32> = u.iter().map(|x| 1000 - 7 * x).collect();
        let a = NmiNormalization::Arithmetic;
        assert!((nmi(&u, &v, a).unwrap() - nmi(&relabeled, &v, a).unwrap()).abs() < 1e-12);
        assert!((ari(&u, &v).unwrap() - ari(&relabeled, &v).unwrap()).abs() < 1e-12);
        assert!((ari(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn normalizations_are_ordered() {
    // max >= arithmetic >= geometric mean of entropies, so NMI goes the other way
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let u = random_partition(&mut rng, 12);
        let v = random_partition(&mut rng, 12);
        let m = nmi(&u, &v, NmiNormalization::Max).unwrap();
        let a = nmi(&u, &v, NmiNormalization::Arithmetic).unwrap();
        let g = nmi(&u, &v, NmiNormalization::Geometric).unwrap();
        assert!(m <= a + 1e-12 && a <= g + 1e-12, "{m} {a} {g}");
    }
}
