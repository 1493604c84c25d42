//! Tail functions for the rank tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Chi-square upper tail probability with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: u32) -> f64 {
    assert!(df >= 1, "chi-square needs df >= 1");
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("df >= 1").sf(x).clamp(0.0, 1.0)
}

/// Two-sided standard normal tail `2·(1 − Φ(|z|))`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// `exp(-x/2) Σ_{k < df/2} (x/2)^k / k!` for even `df`.
    fn even_df_sf(x: f64, df: u32) -> f64 {
        let h = x / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..df / 2 {
            term *= h / k as f64;
            sum += term;
        }
        (-h).exp() * sum
    }

    #[test]
    fn sf_at_zero() {
        for df in 1..10 {
            assert_eq!(chi_square_sf(0.0, df), 1.0);
        }
    }

    #[test]
    fn sf_df2_closed_form() {
        for x in [0.1, 1.0, 3.0, 7.2, 15.0, 40.0] {
            assert_abs_diff_eq!(chi_square_sf(x, 2), (-x / 2.0).exp(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(chi_square_sf(7.2, 2), (-3.6f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn sf_even_df_series() {
        for df in (2..=20).step_by(2) {
            for i in 0..80 {
                let x = i as f64 * 0.5;
                assert_abs_diff_eq!(chi_square_sf(x, df), even_df_sf(x, df), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn sf_df1_critical_values() {
        assert_abs_diff_eq!(chi_square_sf(3.841_458_820_694_124, 1), 0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(chi_square_sf(6.634_896_601_021_214, 1), 0.01, epsilon = 1e-9);
        // df = 1 tail equals the two-sided normal tail at sqrt(x).
        for x in [0.01, 0.5, 1.0, 6.63, 10.0, 25.0] {
            assert_abs_diff_eq!(chi_square_sf(x, 1), normal_two_sided_p(x.sqrt()), epsilon = 1e-9);
        }
    }

    #[test]
    fn normal_tail_known_values() {
        assert_abs_diff_eq!(normal_two_sided_p(1.959_963_984_540_054), 0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_two_sided_p(-1.0), 0.317_310_507_862_914_1, epsilon = 1e-9);
        assert_eq!(normal_two_sided_p(0.0), 1.0);
    }
}
