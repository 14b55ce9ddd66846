//! Fixed-step RK4 over the reference angle, with event location and pole starts.

use crate::error::{Error, Result};

/// Uniformly stepped samples of an ODE solution; the last step may be shortened by an event.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub psi: Vec<f64>,
    pub states: Vec<[f64; N]>,
    pub event_psi: Option<f64>,
}

impl<const N: usize> Trajectory<N> {
    pub fn last(&self) -> (f64, [f64; N]) {
        let i = self.psi.len() - 1;
        (self.psi[i], self.states[i])
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }
}

/// Which sign change of the event function terminates integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Rising,
    Falling,
    Either,
}

impl Crossing {
    fn crossed(self, g0: f64, g1: f64) -> bool {
        match self {
            Crossing::Rising => g0 < 0.0 && g1 >= 0.0,
            Crossing::Falling => g0 > 0.0 && g1 <= 0.0,
            Crossing::Either => (g0 < 0.0 && g1 >= 0.0) || (g0 > 0.0 && g1 <= 0.0),
        }
    }
}

/// Terminal condition `func(psi, state) = 0`.
pub struct EventSpec<G> {
    pub func: G,
    pub direction: Crossing,
    /// Bracket width on psi at which bisection stops.
    pub tol: f64,
}

impl<G> EventSpec<G> {
    pub fn new(func: G, direction: Crossing) -> Self {
        EventSpec { func, direction, tol: 1e-10 }
    }
}

fn finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// One classical RK4 step of signed length `h`.
#[inline]
pub fn rk4_step<const N: usize, F>(rhs: &mut F, psi: f64, y: &[f64; N], h: f64) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let k1 = rhs(psi, y)?;
    let mut t = [0.0; N];
    for i in 0..N {
        t[i] = y[i] + 0.5 * h * k1[i];
    }
    let k2 = rhs(psi + 0.5 * h, &t)?;
    for i in 0..N {
        t[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = rhs(psi + 0.5 * h, &t)?;
    for i in 0..N {
        t[i] = y[i] + h * k3[i];
    }
    let k4 = rhs(psi + h, &t)?;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if !finite(&out) {
        return Err(Error::IntegrationBlowup { psi: psi + h });
    }
    Ok(out)
}

/// Integrates from `psi_from` to `psi_to` (either direction) in `n_steps` equal steps.
pub fn integrate_segment<const N: usize, F>(
    mut rhs: F,
    init: [f64; N],
    psi_from: f64,
    psi_to: f64,
    n_steps: usize,
) -> Result<Trajectory<N>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    if n_steps < 16 {
        return Err(Error::Argument(format!("n_steps must be at least 16, got {n_steps}")));
    }
    if !finite(&init) || !psi_from.is_finite() || !psi_to.is_finite() {
        return Err(Error::Argument("non-finite integration input".into()));
    }
    let h = (psi_to - psi_from) / n_steps as f64;
    let mut psi = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    psi.push(psi_from);
    states.push(init);
    let mut y = init;
    for i in 0..n_steps {
        let p = psi_from + i as f64 * h;
        y = rk4_step(&mut rhs, p, &y, h)?;
        psi.push(if i + 1 == n_steps { psi_to } else { psi_from + (i + 1) as f64 * h });
        states.push(y);
    }
    Ok(Trajectory { psi, states, event_psi: None })
}

/// Refines an event bracketed by the step `(psi0, y0) -> psi0 + h` by bisection on the step length.
pub fn locate_in_step<const N: usize, F, G>(
    rhs: &mut F,
    psi0: f64,
    y0: &[f64; N],
    h: f64,
    event: &EventSpec<G>,
) -> Result<(f64, [f64; N])>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    G: Fn(f64, &[f64; N]) -> f64,
{
    let g0 = (event.func)(psi0, y0);
    let (mut lo, mut hi) = (0.0_f64, h);
    let mut y_hi = rk4_step(rhs, psi0, y0, h)?;
    // Bisect well past `tol` so the event value itself is negligible too.
    let stop = (event.tol * 1e-2).max(f64::EPSILON * psi0.abs().max(1.0));
    while (hi - lo).abs() > stop {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let ym = rk4_step(rhs, psi0, y0, mid)?;
        let gm = (event.func)(psi0 + mid, &ym);
        if event.direction.crossed(g0, gm) || gm == 0.0 {
            hi = mid;
            y_hi = ym;
        } else {
            lo = mid;
        }
    }
    Ok((psi0 + hi, y_hi))
}

/// Integrates until `event` changes sign, ending the trajectory exactly at the located root.
pub fn integrate_to_event<const N: usize, F, G>(
    mut rhs: F,
    init: [f64; N],
    psi_from: f64,
    event: &EventSpec<G>,
    psi_max: f64,
    n_steps_hint: usize,
) -> Result<Trajectory<N>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    G: Fn(f64, &[f64; N]) -> f64,
{
    if n_steps_hint < 16 {
        return Err(Error::Argument(format!("n_steps_hint must be at least 16, got {n_steps_hint}")));
    }
    if !finite(&init) {
        return Err(Error::Argument("non-finite initial state".into()));
    }
    let h = (psi_max - psi_from) / n_steps_hint as f64;
    let mut psi = vec![psi_from];
    let mut states = vec![init];
    let mut y = init;
    let mut g = (event.func)(psi_from, &y);
    for i in 0..n_steps_hint {
        let p = psi_from + i as f64 * h;
        let yn = rk4_step(&mut rhs, p, &y, h)?;
        let gn = (event.func)(p + h, &yn);
        if event.direction.crossed(g, gn) {
            let (ps, ys) = locate_in_step(&mut rhs, p, &y, h, event)?;
            psi.push(ps);
            states.push(ys);
            return Ok(Trajectory { psi, states, event_psi: Some(ps) });
        }
        psi.push(p + h);
        states.push(yn);
        y = yn;
        g = gn;
    }
    Err(Error::EventNotFound { psi_max })
}

/// Which pole a flat segment starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pole {
    A,
    F,
}

/// Regularized start for a flat segment: the pole is offset by `epsilon`.
pub fn pole_start(lambda_pole: f64, side: Pole, epsilon: f64) -> Result<(f64, [f64; 2])> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::Argument(format!("pole epsilon must lie in (0, 1e-3], got {epsilon}")));
    }
    if !(lambda_pole > 0.0) || !lambda_pole.is_finite() {
        return Err(Error::Argument(format!("pole stretch must be positive, got {lambda_pole}")));
    }
    let psi = match side {
        Pole::A => epsilon,
        Pole::F => std::f64::consts::PI - epsilon,
    };
    Ok((psi, [lambda_pole, lambda_pole]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_rhs(_: f64, y: &[f64; 1]) -> Result<[f64; 1]> {
        Ok([y[0]])
    }

    #[test]
    fn exponential_accuracy() {
        let t = integrate_segment(exp_rhs, [1.0], 0.0, 1.0, 1000).unwrap();
        assert!((t.states[1000][0] - std::f64::consts::E).abs() < 1e-10);
        assert_eq!(t.psi[1000], 1.0);
        assert_eq!(t.len(), 1001);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |n| (integrate_segment(exp_rhs, [1.0], 0.0, 1.0, n).unwrap().last().1[0] - std::f64::consts::E).abs();
        let ratio = err(20) / err(40);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_rhs_is_constant() {
        let t = integrate_segment(|_, _: &[f64; 2]| Ok([0.0, 0.0]), [3.0, -1.0], 0.0, 2.0, 16).unwrap();
        assert!(t.states.iter().all(|s| *s == [3.0, -1.0]));
    }

    #[test]
    fn backward_integration() {
        let t = integrate_segment(exp_rhs, [1.0], 1.0, 0.0, 1000).unwrap();
        assert!((t.last().1[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert!(t.psi.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(matches!(integrate_segment(exp_rhs, [1.0], 0.0, 1.0, 15), Err(Error::Argument(_))));
    }

    #[test]
    fn blowup_reports_psi() {
        let r = integrate_segment(|_, y: &[f64; 1]| Ok([y[0] * y[0]]), [1.0], 0.0, 2.0, 100);
        match r {
            Err(Error::IntegrationBlowup { psi }) => assert!(psi > 0.9 && psi <= 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linear_event() {
        let ev = EventSpec::new(|_: f64, y: &[f64; 1]| y[0], Crossing::Falling);
        let t = integrate_to_event(|_, _: &[f64; 1]| Ok([-1.0]), [1.0], 0.0, &ev, 3.0, 64).unwrap();
        let ps = t.event_psi.unwrap();
        assert!((ps - 1.0).abs() < 1e-10);
        assert_eq!(*t.psi.last().unwrap(), ps);
        assert!(t.last().1[0].abs() <= 1e-9);
    }

    #[test]
    fn event_direction_is_respected() {
        // sin crosses zero falling at pi, rising at 2 pi.
        let ev = EventSpec::new(|_: f64, y: &[f64; 2]| y[0], Crossing::Rising);
        let rhs = |_: f64, y: &[f64; 2]| Ok([y[1], -y[0]]);
        let t = integrate_to_event(rhs, [0.0, 1.0], 0.0, &ev, 7.0, 7000).unwrap();
        assert!((t.event_psi.unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn missing_event_is_an_error() {
        let ev = EventSpec::new(|_: f64, y: &[f64; 1]| y[0] - 10.0, Crossing::Rising);
        let r = integrate_to_event(|_, _: &[f64; 1]| Ok([1.0]), [0.0], 0.0, &ev, 1.0, 32);
        assert!(matches!(r, Err(Error::EventNotFound { .. })));
    }

    #[test]
    fn pole_starts() {
        let (p, s) = pole_start(1.05, Pole::A, 1e-4).unwrap();
        assert_eq!(p, 1e-4);
        assert_eq!(s, [1.05, 1.05]);
        let (p, _) = pole_start(1.05, Pole::F, 1e-4).unwrap();
        assert_eq!(p, std::f64::consts::PI - 1e-4);
        assert!(pole_start(1.0, Pole::A, 0.0).is_err());
        assert!(pole_start(1.0, Pole::A, 2e-3).is_err());
    }

    #[test]
    fn determinism() {
        let a = integrate_segment(exp_rhs, [1.0], 0.0, 1.0, 333).unwrap();
        let b = integrate_segment(exp_rhs, [1.0], 0.0, 1.0, 333).unwrap();
        assert_eq!(a, b);
    }
}
