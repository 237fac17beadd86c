use crate::error::{Error, Result};

fn check(a: &[f64], b: &[f64], min: usize, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < min {
        return Err(Error::Usage(format!("{what} needs at least {min} samples, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what}: non-finite input")));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sample Pearson correlation; a constant input is undefined.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b, 2, "pearson")?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("one input is constant".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn srocc(pred: &[f64], mos: &[f64]) -> Result<f64> {
    check(pred, mos, 3, "srocc")?;
    pearson(&average_ranks(pred), &average_ranks(mos))
}

pub fn plcc(aligned: &[f64], mos: &[f64]) -> Result<f64> {
    check(aligned, mos, 3, "plcc")?;
    pearson(aligned, mos)
}

pub fn rmse(aligned: &[f64], mos: &[f64]) -> Result<f64> {
    check(aligned, mos, 1, "rmse")?;
    Ok((aligned.iter().zip(mos).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / aligned.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    /// Rank by counting: `1 + #smaller + (#equal − 1)/2`.
    fn brute_ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let eq = v.iter().filter(|y| *y == x).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect()
    }

    fn textbook_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let saa: f64 = a.iter().map(|x| x * x).sum();
        let sbb: f64 = b.iter().map(|x| x * x).sum();
        (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
    }

    #[test]
    fn examples() {
        let up = [1.0, 2.0, 5.0, 9.0];
        assert!((srocc(&up, &[0.1, 0.2, 0.3, 0.4]).unwrap() - 1.0).abs() < 1e-15);
        assert!((srocc(&up, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let p = [1.0, 2.0, 2.0, 3.0];
        let m = [1.0, 3.0, 2.0, 4.0];
        let expect = textbook_pearson(&brute_ranks(&p), &brute_ranks(&m));
        assert!((srocc(&p, &m).unwrap() - expect).abs() < 1e-12);
        assert!(matches!(srocc(&[1.0; 4], &m), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(plcc(&m, &[2.0; 4]), Err(Error::UndefinedCorrelation(_))));
        assert!((plcc(&m, &m).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(rmse(&m, &m).unwrap(), 0.0);
        let affine: Vec<f64> = m.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!((plcc(&affine, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!(srocc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn match_textbook_oracles() {
        let mut rng = rng_from(21);
        for _ in 0..100 {
            let a: Vec<f64> = (0..20).map(|_| rng.random_range(0..8) as f64).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..5.0)).collect();
            assert_eq!(average_ranks(&a), brute_ranks(&a));
            let s = textbook_pearson(&brute_ranks(&a), &brute_ranks(&b));
            assert!((srocc(&a, &b).unwrap() - s).abs() < 1e-12);
            assert!((plcc(&a, &b).unwrap() - textbook_pearson(&a, &b)).abs() < 1e-12);
            let direct = (a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 20.0).sqrt();
            assert!((rmse(&a, &b).unwrap() - direct).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn invariances(
            seed in 0u64..1000,
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let mut rng = rng_from(seed);
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s = srocc(&a, &b).unwrap();
            let mono: Vec<f64> = a.iter().map(|x| x.exp() * scale + shift).collect();
            prop_assert!((srocc(&mono, &b).unwrap() - s).abs() < 1e-12);
            let p = plcc(&a, &b).unwrap();
            let affine: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            prop_assert!((plcc(&affine, &b).unwrap() - p).abs() < 1e-9);
        }
    }
}
