//! Closed-form M/M/1 and link-delay formulas.
//!
//! Rates are per second, sizes in bytes, distances in km. Delay outputs that
//! feed the simulator are returned in microseconds.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("time argument must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("arrival rate must be non-negative, got {0}")]
    NegativeArrivalRate(f64),
    #[error("only single-server queues are supported, got c={0}")]
    UnsupportedServers(u32),
    #[error("queue is unstable: arrival rate {arrival} >= service rate {service}")]
    Unstable { arrival: f64, service: f64 },
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("propagation speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("delay component must be non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("receive window and round-trip time must be positive")]
    InvalidThroughputInputs,
}

/// Single-server queue with Poisson arrivals and exponential service.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueParams {
    arrival_rate: f64,
    service_rate: f64,
}

impl QueueParams {
    pub fn new(arrival_rate: f64, service_rate: f64) -> Result<Self, QueueError> {
        Self::with_servers(arrival_rate, service_rate, 1)
    }

    pub fn with_servers(arrival_rate: f64, service_rate: f64, servers: u32) -> Result<Self, QueueError> {
        if servers != 1 {
            return Err(QueueError::UnsupportedServers(servers));
        }
        if !(arrival_rate >= 0.0) {
            return Err(QueueError::NegativeArrivalRate(arrival_rate));
        }
        if !(service_rate > 0.0) {
            return Err(QueueError::NonPositiveRate(service_rate));
        }
        Ok(QueueParams { arrival_rate, service_rate })
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }

    pub fn servers(&self) -> u32 {
        1
    }

    pub fn is_stable(&self) -> bool {
        self.arrival_rate < self.service_rate
    }

    pub fn utilization(&self) -> f64 {
        self.arrival_rate / self.service_rate
    }
}

/// Per-packet delay components, all in microseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyBreakdown {
    pub transmission_us: f64,
    pub service_us: f64,
    pub propagation_us: f64,
}

impl LatencyBreakdown {
    pub fn new(transmission_us: f64, service_us: f64, propagation_us: f64) -> Result<Self, QueueError> {
        for v in [transmission_us, service_us, propagation_us] {
            if !(v >= 0.0) {
                return Err(QueueError::NegativeDelay(v));
            }
        }
        Ok(LatencyBreakdown { transmission_us, service_us, propagation_us })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThroughputInputs {
    receive_window_bytes: f64,
    rtt_us: f64,
}

impl ThroughputInputs {
    pub fn new(receive_window_bytes: f64, rtt_us: f64) -> Result<Self, QueueError> {
        if !(receive_window_bytes > 0.0 && rtt_us > 0.0) {
            return Err(QueueError::InvalidThroughputInputs);
        }
        Ok(ThroughputInputs { receive_window_bytes, rtt_us })
    }

    pub fn receive_window_bytes(&self) -> f64 {
        self.receive_window_bytes
    }

    pub fn rtt_us(&self) -> f64 {
        self.rtt_us
    }
}

fn check_rate(rate: f64) -> Result<(), QueueError> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(QueueError::NonPositiveRate(rate))
    }
}

/// Density of the exponential inter-arrival time at `t` seconds.
pub fn interarrival_pdf(t: f64, lambda: f64) -> Result<f64, QueueError> {
    if !(t >= 0.0) {
        return Err(QueueError::NegativeTime(t));
    }
    check_rate(lambda)?;
    Ok(lambda * (-lambda * t).exp())
}

/// Mean inter-arrival time in seconds.
pub fn mean_iat(lambda: f64) -> Result<f64, QueueError> {
    check_rate(lambda)?;
    Ok(1.0 / lambda)
}

/// Density of the exponential service time at `s` seconds.
pub fn service_pdf(s: f64, mu: f64) -> Result<f64, QueueError> {
    if !(s >= 0.0) {
        return Err(QueueError::NegativeTime(s));
    }
    check_rate(mu)?;
    Ok(mu * (-mu * s).exp())
}

/// Mean time in system, `1 / (mu - lambda)`, in seconds.
pub fn expected_wait(params: QueueParams) -> Result<f64, QueueError> {
    if !params.is_stable() {
        return Err(QueueError::Unstable { arrival: params.arrival_rate, service: params.service_rate });
    }
    Ok(1.0 / (params.service_rate - params.arrival_rate))
}

/// Propagation delay over `distance_km` at `speed_km_s`, in microseconds.
pub fn propagation_delay(distance_km: f64, speed_km_s: f64) -> Result<f64, QueueError> {
    if !(distance_km >= 0.0) {
        return Err(QueueError::NegativeDistance(distance_km));
    }
    if !(speed_km_s > 0.0) {
        return Err(QueueError::NonPositiveSpeed(speed_km_s));
    }
    Ok(distance_km * 1e6 / speed_km_s)
}

/// Inverse of [`propagation_delay`]: the length that yields `delay_us`.
pub fn length_for_delay(delay_us: f64, speed_km_s: f64) -> f64 {
    delay_us * speed_km_s / 1e6
}

pub fn total_latency(b: LatencyBreakdown) -> f64 {
    b.transmission_us + b.service_us + b.propagation_us
}

/// Upper bound on throughput in bits per second for a window-limited sender.
pub fn throughput_bound(i: ThroughputInputs) -> f64 {
    i.receive_window_bytes * 8.0 / (i.rtt_us / 1e6)
}

/// Serialization time of `size_bytes` on a link of `bandwidth_bps`, in microseconds.
pub fn transmission_time_us(size_bytes: u32, bandwidth_bps: f64) -> f64 {
    f64::from(size_bytes) * 8.0 / bandwidth_bps * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn pdf_at_zero_is_rate() {
        assert_eq!(interarrival_pdf(0.0, 2.0).unwrap(), 2.0);
        assert_eq!(service_pdf(0.0, 3.0).unwrap(), 3.0);
    }

    #[test]
    fn pdf_at_one() {
        assert!(close(interarrival_pdf(1.0, 1.0).unwrap(), 0.367_879_441_171_442_3, 1e-12));
        assert!(close(service_pdf(1.0, 1.0).unwrap(), 0.367_879_441_171_442_3, 1e-12));
        assert!(close(service_pdf(0.5, 2.0).unwrap(), 0.735_758_882_342_884_6, 1e-12));
    }

    #[test]
    fn pdf_rejects_bad_input() {
        assert!(matches!(interarrival_pdf(-1.0, 1.0), Err(QueueError::NegativeTime(_))));
        assert!(matches!(interarrival_pdf(1.0, 0.0), Err(QueueError::NonPositiveRate(_))));
        assert!(service_pdf(-0.1, 1.0).is_err());
    }

    #[test]
    fn mean_iat_cases() {
        assert_eq!(mean_iat(1.0).unwrap(), 1.0);
        // four packets per four-second group period
        assert_eq!(mean_iat(4.0 / 4.0).unwrap(), 1.0);
        assert!(mean_iat(0.0).is_err());
    }

    #[test]
    fn expected_wait_cases() {
        assert_eq!(expected_wait(QueueParams::new(0.0, 2.0).unwrap()).unwrap(), 0.5);
        assert!(close(expected_wait(QueueParams::new(0.8, 1.0).unwrap()).unwrap(), 5.0, 1e-12));
        assert!(matches!(
            expected_wait(QueueParams::new(1.0, 1.0).unwrap()),
            Err(QueueError::Unstable { .. })
        ));
        assert!(QueueParams::with_servers(0.5, 1.0, 2).is_err());
    }

    #[test]
    fn propagation_cases() {
        assert!(close(propagation_delay(40.6614, 200_000.0).unwrap(), 203.307, 1e-12));
        assert_eq!(propagation_delay(0.0, 200_000.0).unwrap(), 0.0);
        assert_eq!(propagation_delay(200_000.0, 200_000.0).unwrap(), 1e6);
        assert!(propagation_delay(1.0, 0.0).is_err());
        assert!(close(length_for_delay(203.307, 200_000.0), 40.6614, 1e-12));
    }

    #[test]
    fn latency_sum() {
        let l = total_latency(LatencyBreakdown::new(100.0, 50.0, 203.307).unwrap());
        assert!(close(l, 353.307, 1e-12));
        assert_eq!(total_latency(LatencyBreakdown::new(0.0, 0.0, 0.0).unwrap()), 0.0);
        let w = expected_wait(QueueParams::new(0.8, 1.0).unwrap()).unwrap() * 1e6;
        let l = total_latency(LatencyBreakdown::new(w, 0.0, 203.307).unwrap());
        assert!(close(l, 5_000_203.307, 1e-12));
        assert!(LatencyBreakdown::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn throughput_cases() {
        let t = throughput_bound(ThroughputInputs::new(65_535.0, 10_000.0).unwrap());
        assert!(close(t, 52_428_000.0, 1e-12));
        assert_eq!(throughput_bound(ThroughputInputs::new(1.0, 1e6).unwrap()), 8.0);
        let t = throughput_bound(ThroughputInputs::new(65_535.0, 2.0 * 28.727).unwrap());
        assert!(close(t, 9.126e9, 1e-3), "{t}");
        assert!(ThroughputInputs::new(0.0, 1.0).is_err());
    }

    #[test]
    fn transmission_of_full_frame() {
        assert!(close(transmission_time_us(1500, 20e9), 0.6, 1e-12));
    }
}
