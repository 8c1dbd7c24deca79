//! Frame-online assembly of the processing variants, plus evaluation of a
//! processed signal against the scene it came from.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{LstmMaskModel, ModelState};
use crate::metrics::{
    component_energies, delay_from_xcorr, elr_emr_efr, estimate_rir, regression_error_db, snr_sdr, t60_bucket,
    DelaySource, MetricsReport, RegressionSpec,
};
use crate::postfilter::{self, PostfilterOptions};
use crate::psd::{NeuralSource, OracleSource, PsdSource, SmoothedPeriodogram, REFERENCE_CHANNEL};
use crate::scene::Scene;
use crate::signal::{AudioBuffer, Frame, ListenerProfile, PipelineConfig, PsdMode, Spectrogram, HOP_SAMPLES};
use crate::stft::{analyze, StftAnalyzer, StftConfig, StftSynthesizer};
use crate::wpe::WpeState;

/// One row per processing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// WPE on a recursively smoothed reverberant periodogram.
    RlsWpe,
    /// WPE driven by the PSD of the true target.
    OPsdWpe,
    /// Wiener filter from the WPE network's mask, no linear filter.
    DnnPfOnly,
    DnnWpe,
    /// Same graph as `DnnWpe`; the weights come from end-to-end fine-tuning.
    E2epWpe,
    DnnWpePf,
    E2epWpePf,
    Passthrough,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 8] = [
        PipelineMode::RlsWpe,
        PipelineMode::OPsdWpe,
        PipelineMode::DnnPfOnly,
        PipelineMode::DnnWpe,
        PipelineMode::E2epWpe,
        PipelineMode::DnnWpePf,
        PipelineMode::E2epWpePf,
        PipelineMode::Passthrough,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::RlsWpe => "rls_wpe",
            PipelineMode::OPsdWpe => "o_psd_wpe",
            PipelineMode::DnnPfOnly => "dnn_pf_only",
            PipelineMode::DnnWpe => "dnn_wpe",
            PipelineMode::E2epWpe => "e2ep_wpe",
            PipelineMode::DnnWpePf => "dnn_wpe_pf",
            PipelineMode::E2epWpePf => "e2ep_wpe_pf",
            PipelineMode::Passthrough => "passthrough",
        }
    }

    /// Strategy name as written in result tables.
    pub fn label(self) -> &'static str {
        match self {
            PipelineMode::RlsWpe => "RLS-WPE",
            PipelineMode::OPsdWpe => "O-PSD-WPE",
            PipelineMode::DnnPfOnly => "DNN-PF",
            PipelineMode::DnnWpe => "DNN-WPE",
            PipelineMode::E2epWpe => "E2Ep-WPE",
            PipelineMode::DnnWpePf => "DNN-WPE+DNN-PF",
            PipelineMode::E2epWpePf => "E2Ep-WPE+DNN-PF",
            PipelineMode::Passthrough => "unprocessed",
        }
    }

    pub fn uses_wpe(self) -> bool {
        !matches!(self, PipelineMode::DnnPfOnly | PipelineMode::Passthrough)
    }

    /// Whether a single-mask network is required.
    pub fn needs_wpe_model(self) -> bool {
        matches!(
            self,
            PipelineMode::DnnPfOnly
                | PipelineMode::DnnWpe
                | PipelineMode::E2epWpe
                | PipelineMode::DnnWpePf
                | PipelineMode::E2epWpePf
        )
    }

    /// Whether a two-mask post-filter network is required.
    pub fn needs_pf_model(self) -> bool {
        matches!(self, PipelineMode::DnnWpePf | PipelineMode::E2epWpePf)
    }

    pub fn needs_target(self) -> bool {
        self == PipelineMode::OPsdWpe
    }

    /// PSD source of the WPE stage, if there is one.
    pub fn psd_mode(self) -> Option<PsdMode> {
        match self {
            PipelineMode::RlsWpe => Some(PsdMode::Smoothed),
            PipelineMode::OPsdWpe => Some(PsdMode::Oracle),
            PipelineMode::DnnWpe | PipelineMode::E2epWpe | PipelineMode::DnnWpePf | PipelineMode::E2epWpePf => {
                Some(PsdMode::Neural)
            }
            PipelineMode::DnnPfOnly | PipelineMode::Passthrough => None,
        }
    }

    pub fn postfilter(self) -> bool {
        matches!(self, PipelineMode::DnnPfOnly | PipelineMode::DnnWpePf | PipelineMode::E2epWpePf)
    }

    /// Copies the mode's PSD source and post-filter switch into `config`.
    pub fn apply_to(self, config: &mut PipelineConfig) {
        if let Some(psd) = self.psd_mode() {
            config.psd_mode = psd;
        }
        config.postfilter_enabled = self.postfilter();
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(key) || m.label().eq_ignore_ascii_case(key))
            .ok_or_else(|| Error::config(format!("unknown mode '{s}'")))
    }
}

/// Networks available to a pipeline.
#[derive(Debug, Clone, Default)]
pub struct Models {
    /// Single-mask network on `|x_0|`.
    pub wpe: Option<LstmMaskModel>,
    /// Two-mask network on `|v_0|` after WPE.
    pub pf: Option<LstmMaskModel>,
}

fn check_model<'m>(model: Option<&'m LstmMaskModel>, role: &str, heads: usize, bins: usize) -> Result<&'m LstmMaskModel> {
    let m = model.ok_or_else(|| Error::Model(format!("mode needs a {role} network")))?;
    if m.out_masks() != heads {
        return Err(Error::Model(format!(
            "{role} network has {} mask head(s), expected {heads}",
            m.out_masks()
        )));
    }
    if m.input_dim() != bins {
        return Err(Error::Model(format!("{role} network takes {} bins, STFT has {bins}", m.input_dim())));
    }
    Ok(m)
}

enum PsdStage<'m> {
    Smoothed(SmoothedPeriodogram),
    Oracle { analyzer: StftAnalyzer, source: OracleSource },
    Neural(NeuralSource<'m>),
}

impl PsdStage<'_> {
    fn source(&mut self) -> &mut dyn PsdSource {
        match self {
            PsdStage::Smoothed(s) => s,
            PsdStage::Oracle { source, .. } => source,
            PsdStage::Neural(s) => s,
        }
    }
}

/// Streaming processor for one multichannel signal. Feeding the input in
/// any chunking yields the same samples as one call.
pub struct Pipeline<'m> {
    mode: PipelineMode,
    config: PipelineConfig,
    channels: usize,
    analyzer: StftAnalyzer,
    synthesizer: StftSynthesizer,
    wpe: Option<WpeState>,
    psd: Option<PsdStage<'m>>,
    /// Network and state for the mask that drives the Wiener gain.
    mask_net: Option<(&'m LstmMaskModel, ModelState)>,
    pf_options: PostfilterOptions,
    samples_in: usize,
    frames: usize,
    finished: bool,
}

impl<'m> Pipeline<'m> {
    pub fn new(mode: PipelineMode, config: &PipelineConfig, models: &'m Models, channels: usize) -> Result<Self> {
        let mut config = config.clone();
        mode.apply_to(&mut config);
        config.validate()?;
        if channels == 0 {
            return Err(Error::config("input has no channels"));
        }
        if mode.uses_wpe() && channels != config.channels {
            return Err(Error::config(format!(
                "mode {mode} expects {} channels, input has {channels}",
                config.channels
            )));
        }
        let stft = StftConfig::default();
        let bins = stft.num_bins();

        let wpe = if mode.uses_wpe() {
            Some(WpeState::from_config(&config, bins)?)
        } else {
            None
        };
        let psd = match mode.psd_mode() {
            Some(PsdMode::Smoothed) => Some(PsdStage::Smoothed(SmoothedPeriodogram::new(config.smoothing_beta)?)),
            Some(PsdMode::Oracle) => Some(PsdStage::Oracle {
                analyzer: StftAnalyzer::new(stft, channels)?,
                source: OracleSource::new(),
            }),
            Some(PsdMode::Neural) => {
                Some(PsdStage::Neural(NeuralSource::new(check_model(models.wpe.as_ref(), "WPE", 1, bins)?)))
            }
            None => None,
        };
        let mask_net = match mode {
            PipelineMode::DnnPfOnly => Some(check_model(models.wpe.as_ref(), "WPE", 1, bins)?),
            PipelineMode::DnnWpePf | PipelineMode::E2epWpePf => Some(check_model(models.pf.as_ref(), "PF", 2, bins)?),
            _ => None,
        }
        .map(|m| (m, m.initial_state()));

        Ok(Self {
            mode,
            pf_options: PostfilterOptions { min_gain: config.min_gain },
            config,
            channels,
            analyzer: StftAnalyzer::new(stft, channels)?,
            synthesizer: StftSynthesizer::new(stft, channels)?,
            wpe,
            psd,
            mask_net,
            samples_in: 0,
            frames: 0,
            finished: false,
        })
    }

    pub fn mode(&self) -> PipelineMode {
        self.mode
    }

    /// Configuration in effect, with the mode's settings applied.
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn frames_processed(&self) -> usize {
        self.frames
    }

    pub fn samples_in(&self) -> usize {
        self.samples_in
    }

    /// Processes a chunk and returns every output sample that became final.
    /// `target` must accompany each chunk in oracle mode, sample-aligned.
    pub fn process_chunk(&mut self, input: &AudioBuffer, target: Option<&AudioBuffer>) -> Result<AudioBuffer> {
        if self.finished {
            return Err(Error::config("pipeline already finished"));
        }
        if input.num_channels() != self.channels {
            return Err(Error::shape(format!(
                "pipeline built for {} channels, chunk has {}",
                self.channels,
                input.num_channels()
            )));
        }
        if let Some(PsdStage::Oracle { analyzer, source }) = &mut self.psd {
            let target = target.ok_or_else(|| Error::config("oracle PSD mode needs the target signal"))?;
            if target.len() != input.len() || target.num_channels() != input.num_channels() {
                return Err(Error::shape(format!(
                    "target chunk is {}x{}, input chunk {}x{}",
                    target.num_channels(),
                    target.len(),
                    input.num_channels(),
                    input.len()
                )));
            }
            for frame in analyzer.push(target)? {
                source.push_target(frame);
            }
        }
        let frames = self.analyzer.push(input)?;
        self.samples_in += input.len();
        let mut out = vec![Vec::with_capacity(input.len()); self.channels];
        for x in frames {
            let y = self.process_frame(&x)?;
            for (o, chunk) in out.iter_mut().zip(self.synthesizer.push(&y)?) {
                o.extend(chunk);
            }
        }
        AudioBuffer::from_channels(out)
    }

    fn process_frame(&mut self, x: &Frame) -> Result<Frame> {
        self.frames += 1;
        let v = match (&mut self.wpe, &mut self.psd) {
            (Some(wpe), Some(psd)) => {
                let lambda = psd.source().estimate(x)?;
                wpe.step(x, &lambda)?
            }
            _ => x.clone(),
        };
        let Some((net, state)) = &mut self.mask_net else {
            return Ok(v);
        };
        let masks = net.step(state, &v.magnitude(REFERENCE_CHANNEL))?;
        let (target, interference) = match masks.as_slice() {
            [m] => (m.clone(), m.complement()),
            [mv, mr] => (mv.clone(), mr.clone()),
            _ => return Err(Error::Model("unexpected mask head count".into())),
        };
        postfilter::apply(&target, &interference, &v, self.pf_options)
    }

    /// Flushes the overlap-add tail so the output matches the input length.
    pub fn finish(&mut self) -> Result<AudioBuffer> {
        if self.finished {
            return Err(Error::config("pipeline already finished"));
        }
        self.finished = true;
        AudioBuffer::from_channels(self.synthesizer.finish(self.samples_in))
    }

    /// Whole-signal convenience: chunks of `chunk` samples (all at once when 0).
    pub fn run(&mut self, input: &AudioBuffer, target: Option<&AudioBuffer>, chunk: usize) -> Result<AudioBuffer> {
        let step = if chunk == 0 { input.len().max(1) } else { chunk };
        let mut out = vec![Vec::with_capacity(input.len()); self.channels];
        let mut collect = |piece: AudioBuffer| {
            for (o, c) in out.iter_mut().zip(piece.channels()) {
                o.extend_from_slice(c);
            }
        };
        let mut start = 0;
        while start < input.len() {
            let end = (start + step).min(input.len());
            let t = target.map(|t| t.slice(start..end));
            collect(self.process_chunk(&input.slice(start..end), t.as_ref())?);
            start = end;
        }
        collect(self.finish()?);
        AudioBuffer::from_channels(out)
    }
}

/// Processes `input` in one go.
pub fn process(
    mode: PipelineMode,
    config: &PipelineConfig,
    models: &Models,
    input: &AudioBuffer,
    target: Option<&AudioBuffer>,
) -> Result<AudioBuffer> {
    Pipeline::new(mode, config, models, input.num_channels())?.run(input, target, 0)
}

/// Scores `processed` against the scene: regressed-RIR energy ratios over the
/// frames after the initialization segment, and SNR/SDR against the
/// profile's target over the same samples.
pub fn evaluate(
    processed: &AudioBuffer,
    scene: &Scene,
    profile: ListenerProfile,
    config: &PipelineConfig,
    mode: &str,
    use_oracle_delay: bool,
) -> Result<MetricsReport> {
    let ctx = EvalContext::new(processed, scene, use_oracle_delay)?;
    ctx.report(processed, scene, profile, config, mode, scene.dry.evaluated(), None)
}

/// One report per evaluated segment (the initialization segment is skipped
/// when the scene marks it so).
pub fn evaluate_segments(
    processed: &AudioBuffer,
    scene: &Scene,
    profile: ListenerProfile,
    config: &PipelineConfig,
    mode: &str,
    use_oracle_delay: bool,
) -> Result<Vec<MetricsReport>> {
    let ctx = EvalContext::new(processed, scene, use_oracle_delay)?;
    let skip = usize::from(scene.dry.first_segment_is_init);
    scene.dry.segments[skip..]
        .iter()
        .enumerate()
        .map(|(i, seg)| ctx.report(processed, scene, profile, config, mode, seg.clone(), Some(i + skip)))
        .collect()
}

struct EvalContext {
    dry: Spectrogram,
    proc: Spectrogram,
    delay_samples: usize,
    delay_source: DelaySource,
}

impl EvalContext {
    fn new(processed: &AudioBuffer, scene: &Scene, use_oracle_delay: bool) -> Result<Self> {
        let reference = &scene.reverberant;
        if processed.num_channels() != reference.num_channels() || processed.len() != reference.len() {
            return Err(Error::shape(format!(
                "processed audio is {}x{}, scene is {}x{}",
                processed.num_channels(),
                processed.len(),
                reference.num_channels(),
                reference.len()
            )));
        }
        let stft = StftConfig::default();
        let dry = analyze(&scene.dry.audio, &stft)?;
        let proc = analyze(processed, &stft)?;
        let (delay_samples, delay_source) = if use_oracle_delay {
            (scene.rir.propagation_delay, DelaySource::Oracle)
        } else {
            let max_lag = scene.rir.len().min(processed.len() - 1);
            (delay_from_xcorr(scene.dry.audio.channel(0), processed.channel(0), max_lag)?, DelaySource::CrossCorrelation)
        };
        Ok(Self { dry, proc, delay_samples, delay_source })
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        processed: &AudioBuffer,
        scene: &Scene,
        profile: ListenerProfile,
        config: &PipelineConfig,
        mode: &str,
        samples: Range<usize>,
        segment: Option<usize>,
    ) -> Result<MetricsReport> {
        let delta_star = self.delay_samples / HOP_SAMPLES;
        let delta_tilde = profile.delta_frames();
        let order = RegressionSpec::order_for_t30(scene.rir.t30, delta_tilde, config.moderate_frames);
        let frames = samples.start.div_ceil(HOP_SAMPLES)..(samples.end / HOP_SAMPLES).min(self.proc.num_frames());
        let spec = RegressionSpec {
            order,
            delta_star,
            delta_tilde,
            moderate: config.moderate_frames,
            frames: Some(frames.clone()),
        };
        let rir = estimate_rir(&self.dry, &self.proc, &spec, config.parallel)?;
        let ratios = elr_emr_efr(&component_energies(&rir, &self.dry, frames.clone())?)?;
        let error = regression_error_db(&rir, &self.dry, &self.proc, frames.clone())?;
        let target = scene.target(profile);
        let quality = snr_sdr(&target.slice(samples.clone()), &processed.slice(samples))?;

        Ok(MetricsReport {
            utterance: format!("seed{}", scene.spec.rir.seed),
            segment,
            mode: mode.to_string(),
            profile: profile.name().to_string(),
            t60: scene.rir.t60,
            t60_bucket: t60_bucket(scene.spec.rir.t60).map(str::to_string),
            elr: ratios.elr,
            emr: ratios.emr,
            efr: ratios.efr,
            snr: quality.snr,
            sdr: quality.sdr,
            delta_star,
            delay_source: self.delay_source,
            regression_error_db: error,
            order,
            frames_evaluated: frames.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, speech_like, SceneSpec, SequenceSpec};
    use crate::stft::synthesize;

    fn stereo(seconds: f64, seed: u64) -> AudioBuffer {
        AudioBuffer::from_channels(vec![
            speech_like(seconds, seed).unwrap().channel(0).to_vec(),
            speech_like(seconds, seed + 1).unwrap().channel(0).to_vec(),
        ])
        .unwrap()
    }

    fn small_models(seed: u64) -> Models {
        Models {
            wpe: Some(LstmMaskModel::random(257, 8, 1, seed).unwrap()),
            pf: Some(LstmMaskModel::random(257, 8, 2, seed + 1).unwrap()),
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in PipelineMode::ALL {
            assert_eq!(m.name().parse::<PipelineMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!("DNN-WPE+DNN-PF".parse::<PipelineMode>().unwrap(), PipelineMode::DnnWpePf);
        assert!("wpe".parse::<PipelineMode>().is_err());
        let labels: std::collections::HashSet<_> = PipelineMode::ALL.iter().map(|m| m.label()).collect();
        assert_eq!(labels.len(), 8);
    }

    #[test]
    fn passthrough_is_the_stft_round_trip() {
        let x = stereo(1.0, 1);
        let y = process(PipelineMode::Passthrough, &PipelineConfig::default(), &Models::default(), &x, None).unwrap();
        let cfg = StftConfig::default();
        assert_eq!(y, synthesize(&analyze(&x, &cfg).unwrap(), &cfg).unwrap());
        assert_eq!(y.len(), x.len());
    }

    #[test]
    fn every_mode_streams_bit_exactly() {
        let x = stereo(1.3, 3);
        let target = x.scaled(0.5);
        let models = small_models(7);
        let cfg = PipelineConfig::default();
        for mode in PipelineMode::ALL {
            let t = mode.needs_target().then_some(&target);
            let whole = Pipeline::new(mode, &cfg, &models, 2).unwrap().run(&x, t, 0).unwrap();
            assert_eq!(whole.len(), x.len());
            for chunk in [1, 100, 128, 8000, 20_001] {
                let pieces = Pipeline::new(mode, &cfg, &models, 2).unwrap().run(&x, t, chunk).unwrap();
                assert_eq!(pieces, whole, "{mode} chunk {chunk}");
            }
        }
    }

    #[test]
    fn model_requirements_are_checked() {
        let cfg = PipelineConfig::default();
        let none = Models::default();
        for mode in PipelineMode::ALL {
            let r = Pipeline::new(mode, &cfg, &none, 2);
            assert_eq!(r.is_err(), mode.needs_wpe_model() || mode.needs_pf_model(), "{mode}");
        }
        let swapped = Models {
            wpe: Some(LstmMaskModel::zeros(257, 4, 2).unwrap()),
            pf: Some(LstmMaskModel::zeros(257, 4, 1).unwrap()),
        };
        assert!(matches!(Pipeline::new(PipelineMode::DnnWpe, &cfg, &swapped, 2), Err(Error::Model(_))));
        let narrow = Models { wpe: Some(LstmMaskModel::zeros(100, 4, 1).unwrap()), pf: None };
        assert!(matches!(Pipeline::new(PipelineMode::DnnWpe, &cfg, &narrow, 2), Err(Error::Model(_))));
    }

    #[test]
    fn channel_rules() {
        let cfg = PipelineConfig::default();
        let models = small_models(1);
        assert!(Pipeline::new(PipelineMode::RlsWpe, &cfg, &models, 3).is_err());
        assert!(Pipeline::new(PipelineMode::Passthrough, &cfg, &models, 3).is_ok());
        assert!(Pipeline::new(PipelineMode::DnnPfOnly, &cfg, &models, 1).is_ok());
        let mut p = Pipeline::new(PipelineMode::RlsWpe, &cfg, &models, 2).unwrap();
        assert!(p.process_chunk(&AudioBuffer::zeros(1, 10), None).is_err());
    }

    #[test]
    fn oracle_mode_needs_aligned_target() {
        let cfg = PipelineConfig::default();
        let models = Models::default();
        let x = stereo(0.2, 2);
        let mut p = Pipeline::new(PipelineMode::OPsdWpe, &cfg, &models, 2).unwrap();
        assert!(p.process_chunk(&x, None).is_err());
        let mut p = Pipeline::new(PipelineMode::OPsdWpe, &cfg, &models, 2).unwrap();
        assert!(p.process_chunk(&x, Some(&x.slice(0..100))).is_err());
    }

    #[test]
    fn zero_mask_network_halves_pf_only_output() {
        // Zero weights give m = 0.5, so λ_v = λ_r and the gain is exactly 0.5.
        let models = Models { wpe: Some(LstmMaskModel::zeros(257, 4, 1).unwrap()), pf: None };
        let x = stereo(0.5, 5);
        let y = process(PipelineMode::DnnPfOnly, &PipelineConfig::default(), &models, &x, None).unwrap();
        let base = process(PipelineMode::Passthrough, &PipelineConfig::default(), &models, &x, None).unwrap();
        for (a, b) in y.channel(0).iter().zip(base.channel(0)) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn finish_twice_is_an_error() {
        let models = Models::default();
        let mut p = Pipeline::new(PipelineMode::Passthrough, &PipelineConfig::default(), &models, 1).unwrap();
        p.finish().unwrap();
        assert!(p.finish().is_err());
        assert!(p.process_chunk(&AudioBuffer::zeros(1, 4), None).is_err());
    }

    #[test]
    fn evaluating_the_target_hits_the_caps() {
        let spec = SceneSpec {
            sequence: SequenceSpec { total_seconds: 8.0, ..SequenceSpec::default() },
            snr_db: None,
            ..SceneSpec::default()
        };
        let scene = build_scene(&spec, |_| unreachable!()).unwrap();
        let cfg = PipelineConfig::default();
        let r = evaluate(&scene.target_ha, &scene, ListenerProfile::Ha, &cfg, "target", true).unwrap();
        let raw = evaluate(&scene.reverberant, &scene, ListenerProfile::Ha, &cfg, "raw", true).unwrap();
        assert_eq!((r.snr, r.sdr), (crate::metrics::DB_CAP, crate::metrics::DB_CAP));
        // The 4-hop analysis window spreads even a truncated response past
        // the target taps, so only the final range comes close to the cap.
        assert!(r.emr > raw.emr + 5.0, "{r:?} vs {raw:?}");
        assert!(r.efr > 30.0 && r.efr > raw.efr + 15.0, "{r:?} vs {raw:?}");
        assert_eq!(r.t60_bucket.as_deref(), Some("0.55-0.7"));
        assert_eq!(r.delay_source, DelaySource::Oracle);
        let short = scene.reverberant.slice(0..1000);
        assert!(evaluate(&short, &scene, ListenerProfile::Ha, &cfg, "x", true).is_err());
    }

    #[test]
    fn segment_reports_cover_the_evaluated_segments() {
        let spec = SceneSpec {
            sequence: SequenceSpec { total_seconds: 12.0, ..SequenceSpec::default() },
            snr_db: None,
            ..SceneSpec::default()
        };
        let scene = build_scene(&spec, |_| unreachable!()).unwrap();
        let cfg = PipelineConfig::default();
        let per = evaluate_segments(&scene.reverberant, &scene, ListenerProfile::Ha, &cfg, "raw", true).unwrap();
        let whole = evaluate(&scene.reverberant, &scene, ListenerProfile::Ha, &cfg, "raw", true).unwrap();
        assert_eq!(per.iter().map(|r| r.segment).collect::<Vec<_>>(), vec![Some(1), Some(2)]);
        assert_eq!(whole.segment, None);
        let frames: usize = per.iter().map(|r| r.frames_evaluated).sum();
        assert!(frames <= whole.frames_evaluated && frames + 2 >= whole.frames_evaluated);
        for r in &per {
            assert!((r.emr - whole.emr).abs() < 1.5, "{r:?} vs {whole:?}");
        }
    }
}
