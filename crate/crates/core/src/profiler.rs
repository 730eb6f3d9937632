//! Hardware metrics from spike traces, timing and power profiles.
//!
//! Power numbers are inputs (measured elsewhere or taken from a config); this
//! module only does the arithmetic: rate `R = 1/(dt T)`, per-inference energy
//! `E = P/R`, latency `L = dt N_layer`, `EDP = L x E`, spike sparsity
//! `S = sum S_i / (N M)` and `SOPs = S x N_spiking`. All SI units internally
//! (seconds, watts, joules); the report table prints mJ / ms / uJ*s.

use serde::{Deserialize, Serialize};

use crate::runtime::SpikeTrace;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub platform: String,
    pub static_w: f64,
    pub dynamic_w: f64,
}

impl PowerProfile {
    pub fn total_w(&self) -> f64 {
        self.static_w + self.dynamic_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.static_w < 0.0 || self.dynamic_w < 0.0 {
            return Err(Error::InvalidArgument("power must be non-negative".into()));
        }
        Ok(())
    }
}

/// How the per-step time was obtained; recorded in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtSource {
    Configured,
    InferredFromRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    /// Average seconds per simulation timestep.
    pub dt: f64,
    /// Timesteps per inference.
    pub t_steps: usize,
    /// Deployed layer count.
    pub n_layers: usize,
    pub dt_source: DtSource,
}

impl TimingProfile {
    pub fn from_dt(dt: f64, t_steps: usize, n_layers: usize) -> Result<Self> {
        if dt <= 0.0 || t_steps == 0 || n_layers == 0 {
            return Err(Error::InvalidArgument(
                "timing needs dt > 0, t_steps >= 1, n_layers >= 1".into(),
            ));
        }
        Ok(Self {
            dt,
            t_steps,
            n_layers,
            dt_source: DtSource::Configured,
        })
    }

    /// Inverts the rate equation: `dt = 1 / (rate * T)`.
    pub fn from_rate(rate_hz: f64, t_steps: usize, n_layers: usize) -> Result<Self> {
        if rate_hz <= 0.0 {
            return Err(Error::InvalidArgument("rate must be positive".into()));
        }
        let mut tp = Self::from_dt(1.0 / (rate_hz * t_steps as f64), t_steps, n_layers)?;
        tp.dt_source = DtSource::InferredFromRate;
        Ok(tp)
    }
}

/// Inferences per second: `R = 1 / (dt T)`.
pub fn inference_rate(tp: &TimingProfile) -> f64 {
    1.0 / (tp.dt * tp.t_steps as f64)
}

/// Joules per inference at the given average power: `E = P / R`.
pub fn energy_per_inference(power_w: f64, rate_hz: f64) -> Result<f64> {
    if rate_hz <= 0.0 {
        return Err(Error::InvalidArgument("rate must be positive".into()));
    }
    Ok(power_w / rate_hz)
}

/// Pipeline latency: `L = dt N_layer`.
pub fn latency(tp: &TimingProfile) -> f64 {
    tp.dt * tp.n_layers as f64
}

/// Energy-delay product in joule-seconds.
pub fn edp(latency_s: f64, energy_j: f64) -> f64 {
    latency_s * energy_j
}

/// Sparsity and synaptic operations from a trace: `S = sum S_i / (N M)` over
/// the N spiking-threshold neurons and M samples, `SOPs = S x N`. The
/// non-spiking readout layer is excluded.
pub fn sparsity_and_sops(trace: &SpikeTrace) -> Result<(f64, f64)> {
    let n = trace.spiking_neuron_count();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "trace has no spiking-threshold neurons".into(),
        ));
    }
    if trace.samples == 0 {
        return Err(Error::InvalidArgument("trace covers zero samples".into()));
    }
    let total = trace.total_spikes() as f64;
    let s = total / (n as f64 * trace.samples as f64);
    Ok((s, s * n as f64))
}

/// Fraction of conv synapses whose source carried at least one spike (or
/// nonzero input value) during the trace.
pub fn active_synapse_fraction(trace: &SpikeTrace) -> Result<f64> {
    let total: u64 = trace.conv_layers.iter().map(|c| c.total_synapses).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("trace has no conv synapses".into()));
    }
    let active: u64 = trace.conv_layers.iter().map(|c| c.active_synapses).sum();
    Ok(active as f64 / total as f64)
}

/// Everything the profiler can say about one (model, platform, dataset) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub platform: String,
    pub power: PowerProfile,
    pub timing: TimingProfile,
    /// Inferences per second.
    pub rate_hz: f64,
    pub e_static_j: f64,
    pub e_dynamic_j: f64,
    pub e_total_j: f64,
    pub latency_s: f64,
    /// `latency_s * e_total_j`, the headline figure of merit.
    pub edp_total_js: f64,
    pub edp_dynamic_js: f64,
    pub sparsity: Option<f64>,
    pub sops: Option<f64>,
    pub active_synapse_fraction: Option<f64>,
}

/// Assembles a report; the energy identities (`E_total = E_static +
/// E_dynamic`, `EDP = L x E`) hold bit-for-bit by construction.
pub fn build_report(
    power: &PowerProfile,
    timing: &TimingProfile,
    trace: Option<&SpikeTrace>,
) -> Result<ProfileReport> {
    power.validate()?;
    let rate = inference_rate(timing);
    let e_static = energy_per_inference(power.static_w, rate)?;
    let e_dynamic = energy_per_inference(power.dynamic_w, rate)?;
    let e_total = e_static + e_dynamic;
    let l = latency(timing);
    let (sparsity, sops, active) = match trace {
        Some(t) => {
            let (s, ops) = sparsity_and_sops(t)?;
            let frac = active_synapse_fraction(t).ok();
            (Some(s), Some(ops), frac)
        }
        None => (None, None, None),
    };
    Ok(ProfileReport {
        platform: power.platform.clone(),
        power: power.clone(),
        timing: *timing,
        rate_hz: rate,
        e_static_j: e_static,
        e_dynamic_j: e_dynamic,
        e_total_j: e_total,
        latency_s: l,
        edp_total_js: edp(l, e_total),
        edp_dynamic_js: edp(l, e_dynamic),
        sparsity,
        sops,
        active_synapse_fraction: active,
    })
}

/// Compact serializable form of a [`SpikeTrace`]: per-layer totals plus the
/// derived metrics, suitable for dump files (per-neuron counts stay in
/// memory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub samples: usize,
    pub timesteps: usize,
    pub lif_layers: Vec<LifLayerSummary>,
    pub conv_layers: Vec<ConvLayerSummary>,
    pub sparsity: f64,
    pub sops: f64,
    pub active_synapse_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifLayerSummary {
    pub layer_index: usize,
    pub spiking: bool,
    pub neurons: usize,
    pub total_spikes: u64,
    pub max_spikes: u64,
    /// Mean spikes per neuron per sample.
    pub mean_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSummary {
    pub layer_index: usize,
    pub total_synapses: u64,
    pub active_synapses: u64,
}

impl TraceSummary {
    pub fn from_trace(trace: &SpikeTrace) -> Result<Self> {
        let (sparsity, sops) = sparsity_and_sops(trace)?;
        let active = active_synapse_fraction(trace).ok();
        Ok(Self {
            samples: trace.samples,
            timesteps: trace.timesteps,
            lif_layers: trace
                .lif_layers
                .iter()
                .map(|l| {
                    let total: u64 = l.spike_counts.iter().sum();
                    LifLayerSummary {
                        layer_index: l.layer_index,
                        spiking: l.spiking,
                        neurons: l.spike_counts.len(),
                        total_spikes: total,
                        max_spikes: l.spike_counts.iter().copied().max().unwrap_or(0),
                        mean_rate: total as f64
                            / (l.spike_counts.len().max(1) as f64 * trace.samples.max(1) as f64),
                    }
                })
                .collect(),
            conv_layers: trace
                .conv_layers
                .iter()
                .map(|c| ConvLayerSummary {
                    layer_index: c.layer_index,
                    total_synapses: c.total_synapses,
                    active_synapses: c.active_synapses,
                })
                .collect(),
            sparsity,
            sops,
            active_synapse_fraction: active,
        })
    }
}

/// One row of the benchmark-style summary table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub platform: String,
    pub te_mj: f64,
    pub l_ms: f64,
    pub edp_ujs: f64,
}

impl ReportRow {
    pub fn from_report(model: &str, r: &ProfileReport) -> Self {
        Self {
            model: model.to_string(),
            platform: r.platform.clone(),
            te_mj: r.e_total_j * 1e3,
            l_ms: r.latency_s * 1e3,
            edp_ujs: r.edp_total_js * 1e6,
        }
    }
}

/// Renders aligned columns: model, platform, TE (mJ), L (ms), EDP (uJ*s).
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let header = ("Model", "Platform", "TE (mJ)", "L (ms)", "EDP (uJ*s)");
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.platform.clone(),
                format!("{:.2}", r.te_mj),
                format!("{:.2}", r.l_ms),
                format!("{:.1}", r.edp_ujs),
            ]
        })
        .collect();
    let mut widths = [
        header.0.len(),
        header.1.len(),
        header.2.len(),
        header.3.len(),
        header.4.len(),
    ];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = format!(
        "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}  {:>w4$}\n",
        header.0,
        header.1,
        header.2,
        header.3,
        header.4,
        w0 = widths[0],
        w1 = widths[1],
        w2 = widths[2],
        w3 = widths[3],
        w4 = widths[4],
    );
    for row in &cells {
        out.push_str(&format!(
            "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}  {:>w4$}\n",
            row[0],
            row[1],
            row[2],
            row[3],
            row[4],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
            w4 = widths[4],
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{LayerTrace, SynapseTrace};

    fn power(static_w: f64, dynamic_w: f64) -> PowerProfile {
        PowerProfile {
            platform: "loihi2".into(),
            static_w,
            dynamic_w,
        }
    }

    #[test]
    fn rate_arithmetic() {
        let tp = TimingProfile::from_dt(1e-3, 7, 10).unwrap();
        assert!((inference_rate(&tp) - 142.857142857).abs() < 1e-6);

        // rate 160/s at T=7 implies dt ~ 0.893 ms
        let tp = TimingProfile::from_rate(160.0, 7, 10).unwrap();
        assert!((tp.dt - 1.0 / (160.0 * 7.0)).abs() < 1e-12);
        assert!((tp.dt - 0.893e-3).abs() < 1e-6);
        assert_eq!(tp.dt_source, DtSource::InferredFromRate);
        assert!((inference_rate(&tp) - 160.0).abs() < 1e-9);

        // doubling dt halves the rate
        let tp2 = TimingProfile::from_dt(2e-3, 7, 10).unwrap();
        assert!(
            (inference_rate(&tp2) * 2.0
                - inference_rate(&TimingProfile::from_dt(1e-3, 7, 10).unwrap()))
            .abs()
                < 1e-9
        );
    }

    #[test]
    fn energy_arithmetic() {
        // 2.09 W at 160 inferences/s -> 13.06 mJ
        let e = energy_per_inference(1.71 + 0.38, 160.0).unwrap();
        assert!((e * 1e3 - 13.0625).abs() < 1e-9);

        assert_eq!(energy_per_inference(0.0, 160.0).unwrap(), 0.0);

        let e_dyn = energy_per_inference(0.38, 160.0).unwrap();
        assert!((e_dyn * 1e3 - 2.375).abs() < 1e-9);

        assert!(energy_per_inference(1.0, 0.0).is_err());
    }

    #[test]
    fn energy_is_linear_in_power() {
        let r = 137.0;
        let a = energy_per_inference(1.71, r).unwrap();
        let b = energy_per_inference(0.38, r).unwrap();
        let total = energy_per_inference(1.71 + 0.38, r).unwrap();
        assert!((a + b - total).abs() < 1e-15);
    }

    #[test]
    fn latency_and_edp() {
        let tp = TimingProfile::from_dt(1e-3, 7, 10).unwrap();
        assert!((latency(&tp) - 10e-3).abs() < 1e-12);

        // published-row cross-checks, printed precision
        let edp1 = edp(9.37e-3, 13.05e-3);
        assert!((edp1 * 1e6 - 122.3).abs() < 0.05, "{}", edp1 * 1e6);
        let edp2 = edp(14.02e-3, 20.06e-3);
        assert!((edp2 * 1e6 - 281.2).abs() < 0.05, "{}", edp2 * 1e6);
    }

    #[test]
    fn edp_monotone_in_dt() {
        let p = power(1.71, 0.38);
        let mut prev = 0.0;
        for dt in [0.5e-3, 1e-3, 2e-3, 4e-3] {
            let tp = TimingProfile::from_dt(dt, 7, 10).unwrap();
            let r = build_report(&p, &tp, None).unwrap();
            assert!(r.edp_total_js > prev);
            prev = r.edp_total_js;
        }
    }

    fn trace(counts: Vec<Vec<u64>>, samples: usize) -> SpikeTrace {
        SpikeTrace {
            samples,
            timesteps: 7,
            lif_layers: counts
                .into_iter()
                .enumerate()
                .map(|(i, spike_counts)| LayerTrace {
                    layer_index: i,
                    spiking: true,
                    spike_counts,
                })
                .collect(),
            conv_layers: vec![SynapseTrace {
                layer_index: 0,
                total_synapses: 100,
                active_synapses: 37,
            }],
        }
    }

    #[test]
    fn sparsity_and_sops_cases() {
        // silent network
        let t = trace(vec![vec![0, 0, 0, 0]], 1);
        let (s, sops) = sparsity_and_sops(&t).unwrap();
        assert_eq!((s, sops), (0.0, 0.0));

        // every neuron fires once per sample
        let t = trace(vec![vec![3, 3], vec![3, 3]], 3);
        let (s, sops) = sparsity_and_sops(&t).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(sops, 4.0);

        // half the neurons fire once, M = 1
        let t = trace(vec![vec![1, 1, 0, 0]], 1);
        let (s, sops) = sparsity_and_sops(&t).unwrap();
        assert_eq!(s, 0.5);
        assert_eq!(sops, 2.0);
    }

    #[test]
    fn sops_equals_total_spikes_per_sample() {
        // algebraic identity: S * N = sum(S_i) / M
        let t = trace(vec![vec![5, 0, 2, 7], vec![1, 1, 1, 1]], 4);
        let (_, sops) = sparsity_and_sops(&t).unwrap();
        assert!((sops - t.total_spikes() as f64 / t.samples as f64).abs() < 1e-12);
    }

    #[test]
    fn active_fraction() {
        let t = trace(vec![vec![1]], 1);
        assert!((active_synapse_fraction(&t).unwrap() - 0.37).abs() < 1e-12);
    }

    #[test]
    fn report_identities_hold_bitwise() {
        let p = power(1.71, 0.38);
        let tp = TimingProfile::from_rate(160.0, 7, 10).unwrap();
        let r = build_report(&p, &tp, None).unwrap();
        assert_eq!(r.e_total_j, r.e_static_j + r.e_dynamic_j);
        assert_eq!(r.edp_total_js, r.latency_s * r.e_total_j);
        assert_eq!(r.edp_dynamic_js, r.latency_s * r.e_dynamic_j);
        assert!((r.e_total_j * 1e3 - 13.0625).abs() < 1e-9);
    }

    #[test]
    fn table_layout_is_aligned() {
        let p = power(1.71, 0.38);
        let tp = TimingProfile::from_rate(160.0, 7, 10).unwrap();
        let r = build_report(&p, &tp, None).unwrap();
        let rows = vec![
            ReportRow::from_report("model1", &r),
            ReportRow::from_report("a-much-longer-name", &r),
        ];
        let table = format_report_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("TE (mJ)"));
        assert_eq!(lines[1].len(), lines[2].len());
    }
}
