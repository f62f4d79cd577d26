//! Closed-form fluid solutions used as oracles.

/// Single-pool Erlang-A fluid (no sharing) with constant rates, started at
/// `(q0, z0)`. Returns `(q(t), z(t))`.
pub fn erlang_a_closed_form(
    q0: f64,
    z0: f64,
    lambda: f64,
    m: f64,
    mu: f64,
    theta: f64,
    t: f64,
) -> (f64, f64) {
    // idle capacity takes waiting fluid immediately
    let take = q0.min((m - z0).max(0.0));
    let (q0, z0) = (q0 - take, z0 + take);
    let target = lambda / mu;

    if q0 <= 0.0 && z0 < m {
        // slack: z relaxes toward lambda / mu until the pool fills
        if target <= m {
            return (0.0, target + (z0 - target) * (-mu * t).exp());
        }
        let t_fill = ((target - z0) / (target - m)).ln() / mu;
        if t <= t_fill {
            return (0.0, target + (z0 - target) * (-mu * t).exp());
        }
        return (queue_from(0.0, lambda - mu * m, theta, t - t_fill), m);
    }

    // full pool
    let excess = lambda - mu * m;
    if excess >= 0.0 {
        return (queue_from(q0, excess, theta, t), m);
    }
    let t_empty = if theta > 0.0 {
        let c = excess / theta;
        ((q0 - c) / -c).ln() / theta
    } else {
        q0 / -excess
    };
    if t <= t_empty {
        return (queue_from(q0, excess, theta, t).max(0.0), m);
    }
    (0.0, target + (m - target) * (-mu * (t - t_empty)).exp())
}

/// `q' = excess - theta q`, `q(0) = q0`.
fn queue_from(q0: f64, excess: f64, theta: f64, t: f64) -> f64 {
    if theta > 0.0 {
        let c = excess / theta;
        c + (q0 - c) * (-theta * t).exp()
    } else {
        q0 + excess * t
    }
}

/// Shared content draining with no new admissions.
pub fn shared_decay_closed_form(z0: f64, mu: f64, t: f64) -> f64 {
    z0 * (-mu * t).exp()
}

/// Queue 1 of a critically loaded pool 1 whose class-2 content `z0` is being
/// replaced by class-1 customers: `q' = (mu11 - mu21) z0 e^{-mu21 t} - theta1 q`.
pub fn q1_recovery_closed_form(q0: f64, z0: f64, mu11: f64, mu21: f64, theta1: f64, t: f64) -> f64 {
    let a = (mu11 - mu21) * z0;
    let decay = (-theta1 * t).exp();
    if (theta1 - mu21).abs() <= 1e-12 * theta1.abs().max(mu21.abs()).max(1.0) {
        q0 * decay + a * t * decay
    } else {
        q0 * decay + a * ((-mu21 * t).exp() - decay) / (theta1 - mu21)
    }
}
