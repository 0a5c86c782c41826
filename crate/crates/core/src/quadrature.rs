//! Adaptive Gauss–Kronrod (G10/K21) quadrature on finite intervals.
//!
//! The integrator bisects the sub-interval with the largest error estimate
//! until the summed estimate meets `max(abs_tol, rel_tol * |I|)` for every
//! component of the (vector-valued) integrand.

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_643_474_739,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Tolerances and subdivision budget for [`integrate`] / [`integrate_vec`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-300,
            rel_tol: 1e-12,
            max_intervals: 2000,
        }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
}

fn kronrod<const N: usize, F>(f: &F, a: f64, b: f64) -> Result<Segment<N>>
where
    F: Fn(f64) -> [f64; N],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    for (j, &x) in XGK.iter().enumerate() {
        let pts: &[f64] = if x == 0.0 {
            &[center]
        } else {
            &[center - half * x, center + half * x]
        };
        for &t in pts {
            let y = f(t);
            for k in 0..N {
                if !y[k].is_finite() {
                    return Err(Error::Quadrature(format!(
                        "integrand not finite at t = {t:e}"
                    )));
                }
                kron[k] += WGK[j] * y[k];
                if j % 2 == 1 {
                    gauss[k] += WG[j / 2] * y[k];
                }
            }
        }
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for k in 0..N {
        value[k] = kron[k] * half;
        error[k] = ((kron[k] - gauss[k]) * half).abs();
    }
    Ok(Segment { a, b, value, error })
}

/// Integrates a vector-valued function over `[a, b]`.
pub fn integrate_vec<const N: usize, F>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<[f64; N]>
where
    F: Fn(f64) -> [f64; N],
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature("interval bounds must be finite".into()));
    }
    if a == b {
        return Ok([0.0; N]);
    }
    let mut segments = vec![kronrod(&f, a, b)?];
    loop {
        let mut total = [0.0; N];
        let mut err = [0.0; N];
        for s in &segments {
            for k in 0..N {
                total[k] += s.value[k];
                err[k] += s.error[k];
            }
        }
        let done = (0..N).all(|k| err[k] <= opts.abs_tol.max(opts.rel_tol * total[k].abs()));
        if done {
            return Ok(total);
        }
        if segments.len() >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "tolerance not reached after {} subdivisions (error estimate {:e})",
                segments.len(),
                err.iter().cloned().fold(0.0, f64::max)
            )));
        }
        // Split the segment whose error is worst relative to the tolerance budget.
        let (worst, _) = segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let score = (0..N)
                    .map(|k| s.error[k] / opts.abs_tol.max(opts.rel_tol * total[k].abs()))
                    .fold(0.0, f64::max);
                (i, score)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            return Err(Error::Quadrature("interval collapsed below machine resolution".into()));
        }
        segments.push(kronrod(&f, seg.a, mid)?);
        segments.push(kronrod(&f, mid, seg.b)?);
    }
}

/// Integrates a scalar function over `[a, b]`.
pub fn integrate<F>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate_vec(|t| [f(t)], a, b, opts).map(|v| v[0])
}

/// Integrates over consecutive panels `[p0, p1], [p1, p2], ...`, useful when
/// the integrand has known kinks or sharp features at the breakpoints.
pub fn integrate_panels<const N: usize, F>(f: F, breaks: &[f64], opts: QuadOptions) -> Result<[f64; N]>
where
    F: Fn(f64) -> [f64; N],
{
    let mut total = [0.0; N];
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let part = integrate_vec(&f, w[0], w[1], opts)?;
            for k in 0..N {
                total[k] += part[k];
            }
        }
    }
    Ok(total)
}
