//! Six-point Gauss-Legendre rule, exact for polynomials up to degree 11.

const NODES: [f64; 6] = [
    -0.932_469_514_203_152_f64,
    -0.661_209_386_466_264_5,
    -0.238_619_186_083_196_9,
    0.238_619_186_083_196_9,
    0.661_209_386_466_264_5,
    0.932_469_514_203_152,
];

const WEIGHTS: [f64; 6] = [
    0.171_324_492_379_170_35,
    0.360_761_573_048_138_6,
    0.467_913_934_572_691_04,
    0.467_913_934_572_691_04,
    0.360_761_573_048_138_6,
    0.171_324_492_379_170_35,
];

/// Nodes and weights of the rule mapped onto `[a, b]`.
pub fn panel(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    NODES
        .iter()
        .zip(WEIGHTS.iter())
        .map(move |(&x, &w)| (mid + half * x, half * w))
}

/// Composite rule over `panels` equal panels of `[0, 1]`.
pub fn unit_interval(panels: usize) -> Vec<(f64, f64)> {
    let h = 1.0 / panels as f64;
    (0..panels)
        .flat_map(|p| panel(p as f64 * h, (p + 1) as f64 * h))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_degree_eleven_exactly() {
        let integral: f64 = panel(0.0, 1.0).map(|(x, w)| w * x.powi(11)).sum();
        assert!((integral - 1.0 / 12.0).abs() < 1e-15);
        let total: f64 = panel(-2.0, 3.0).map(|(_, w)| w).sum();
        assert!((total - 5.0).abs() < 1e-14);
    }

    #[test]
    fn composite_rule_handles_smooth_functions() {
        let integral: f64 = unit_interval(20)
            .into_iter()
            .map(|(x, w)| w * (2.0 * std::f64::consts::PI * x).sin().powi(2))
            .sum();
        assert!((integral - 0.5).abs() < 1e-13);
    }
}
