use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use diarkit_core::{audio_io, clustering, features, gmm, metrics, pipeline, segmentation, vad, Matrix};

create_exception!(diarkit, DiarkitError, PyException);

fn to_py(e: diarkit_core::Error) -> PyErr {
    DiarkitError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Matrix::from_rows(&refs).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Mono samples in [-1, 1] with a sample rate.
#[pyclass(name = "AudioBuffer", frozen)]
struct PyAudioBuffer {
    inner: audio_io::AudioBuffer,
}

#[pymethods]
impl PyAudioBuffer {
    #[new]
    fn new(samples: Vec<f64>, sample_rate_hz: u32) -> PyResult<Self> {
        audio_io::AudioBuffer::new(samples, sample_rate_hz)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn samples(&self) -> Vec<f64> {
        self.inner.samples().to_vec()
    }

    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.inner.sample_rate_hz()
    }

    #[getter]
    fn duration_seconds(&self) -> f64 {
        self.inner.duration_seconds()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Write as 16-bit PCM (`float32=False`) or 32-bit float.
    #[pyo3(signature = (path, float32 = false))]
    fn write_wav(&self, path: &str, float32: bool) -> PyResult<()> {
        let fmt = if float32 {
            audio_io::SampleFormat::Float32
        } else {
            audio_io::SampleFormat::Pcm16
        };
        audio_io::write_wav(&self.inner, fmt, path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "AudioBuffer({} samples @ {} Hz)",
            self.inner.len(),
            self.inner.sample_rate_hz()
        )
    }
}

/// Pipeline settings. Keyword arguments use the config-file key names.
#[pyclass(name = "PipelineConfig")]
struct PyPipelineConfig {
    inner: pipeline::PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut inner = pipeline::PipelineConfig::default();
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value = v.str()?.to_string();
                inner.set(0, &key, &value).map_err(to_py)?;
            }
        }
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        pipeline::PipelineConfig::parse(text)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        pipeline::PipelineConfig::load(path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner;
        next.set(0, key, value).map_err(to_py)?;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!("PipelineConfig(\n{})", self.inner.to_text())
    }
}

/// Speaker turns of one recording.
#[pyclass(name = "Diarization", frozen)]
struct PyDiarization {
    inner: pipeline::Diarization,
}

#[pymethods]
impl PyDiarization {
    #[getter]
    fn file_id(&self) -> String {
        self.inner.file_id.clone()
    }

    /// `(onset_s, duration_s, speaker)` per turn, sorted by onset.
    #[getter]
    fn turns(&self) -> Vec<(f64, f64, String)> {
        self.inner
            .turns
            .iter()
            .map(|t| (t.onset_s, t.duration_s, t.speaker.clone()))
            .collect()
    }

    fn speakers(&self) -> Vec<String> {
        self.inner.speakers()
    }

    fn to_rttm(&self) -> String {
        pipeline::rttm_string(&self.inner)
    }

    #[staticmethod]
    fn from_rttm(text: &str) -> PyResult<Vec<PyDiarization>> {
        pipeline::parse_rttm(text)
            .map(|ds| ds.into_iter().map(|inner| PyDiarization { inner }).collect())
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.turns.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Diarization('{}', {} turns, {} speakers)",
            self.inner.file_id,
            self.inner.turns.len(),
            self.inner.speakers().len()
        )
    }
}

/// Diagonal-covariance Gaussian mixture.
#[pyclass(name = "GaussianMixture", frozen)]
struct PyGaussianMixture {
    inner: gmm::GaussianMixture,
}

#[pymethods]
impl PyGaussianMixture {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> PyResult<Self> {
        gmm::GaussianMixture::new(weights, matrix(means)?, matrix(variances)?)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Fit with EM. Returns the model and its log-likelihood trace.
    #[staticmethod]
    #[pyo3(signature = (data, n_components, seed = 42, max_iters = 200, tol = 1e-4, n_init = 3))]
    fn fit(
        data: Vec<Vec<f64>>,
        n_components: usize,
        seed: u64,
        max_iters: usize,
        tol: f64,
        n_init: usize,
    ) -> PyResult<(Self, Vec<f64>)> {
        let cfg = gmm::FitConfig {
            max_iters,
            tol,
            seed,
            n_init,
        };
        let (inner, report) = gmm::fit_em(&matrix(data)?, n_components, &cfg).map_err(to_py)?;
        Ok((Self { inner }, report.log_likelihood_trace))
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        rows(self.inner.means())
    }

    #[getter]
    fn variances(&self) -> Vec<Vec<f64>> {
        rows(self.inner.variances())
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn log_likelihood(&self, data: Vec<Vec<f64>>) -> PyResult<f64> {
        gmm::log_likelihood(&self.inner, &matrix(data)?).map_err(to_py)
    }

    fn bic(&self, data: Vec<Vec<f64>>) -> PyResult<f64> {
        gmm::bic(&self.inner, &matrix(data)?).map_err(to_py)
    }

    fn aic(&self, data: Vec<Vec<f64>>) -> PyResult<f64> {
        gmm::aic(&self.inner, &matrix(data)?).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        gmm::GaussianMixture::from_text(text)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "GaussianMixture(n_components={}, dim={})",
            self.inner.n_components(),
            self.inner.dim()
        )
    }
}

#[pyfunction]
fn load_wav(path: &str) -> PyResult<PyAudioBuffer> {
    audio_io::load_wav(path)
        .map(|inner| PyAudioBuffer { inner })
        .map_err(to_py)
}

/// MFCCs with deltas and delta-deltas, one row per frame.
#[pyfunction]
#[pyo3(signature = (audio, config = None))]
fn mfcc(audio: &PyAudioBuffer, config: Option<&PyPipelineConfig>) -> PyResult<Vec<Vec<f64>>> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let base = features::mfcc(&audio.inner, &cfg.mfcc()).map_err(to_py)?;
    let full = features::stack_deltas(&base, cfg.delta_width).map_err(to_py)?;
    Ok(rows(&full.vectors))
}

/// Per-frame RMS energies and speech regions as `(start, end)` frame pairs.
#[pyfunction]
#[pyo3(signature = (audio, config = None))]
fn detect_speech(
    audio: &PyAudioBuffer,
    config: Option<&PyPipelineConfig>,
) -> PyResult<(Vec<f64>, Vec<(usize, usize)>)> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let sr = audio.inner.sample_rate_hz();
    let stft = cfg.stft();
    let energies = audio_io::frame_rms(&audio.inner, stft.frame_len(sr), stft.hop(sr)).map_err(to_py)?;
    let decision = vad::detect_speech(&energies, &cfg.vad()).map_err(to_py)?;
    let regions = decision.speech_regions.iter().map(|r| (r.start, r.end)).collect();
    Ok((energies, regions))
}

/// Full-covariance delta-BIC for splitting `data` before row `split`.
#[pyfunction]
#[pyo3(signature = (data, split, penalty = 1.0))]
fn delta_bic(data: Vec<Vec<f64>>, split: usize, penalty: f64) -> PyResult<f64> {
    segmentation::delta_bic(&matrix(data)?, split, penalty).map_err(to_py)
}

/// Distance between two mixtures: `"moment_matched"` or `"matched_pair"`.
#[pyfunction]
#[pyo3(signature = (a, b, kind = "moment_matched"))]
fn gmm_distance(a: &PyGaussianMixture, b: &PyGaussianMixture, kind: &str) -> PyResult<f64> {
    let kind: clustering::ClusterDistance = kind.parse().map_err(|e: diarkit_core::Error| PyValueError::new_err(e.to_string()))?;
    kind.eval(&a.inner, &b.inner).map_err(to_py)
}

/// Diarization error rate between two RTTM texts.
#[pyfunction]
#[pyo3(signature = (reference_rttm, hypothesis_rttm, collar_s = 0.25))]
fn der(reference_rttm: &str, hypothesis_rttm: &str, collar_s: f64) -> PyResult<f64> {
    let r = pipeline::rttm_timeline(reference_rttm, None).map_err(to_py)?;
    let h = pipeline::rttm_timeline(hypothesis_rttm, None).map_err(to_py)?;
    metrics::der(&r, &h, collar_s).map(|rep| rep.rate).map_err(to_py)
}

/// Word error rate and `(substitutions, insertions, deletions)`.
#[pyfunction]
fn wer(reference: &str, hypothesis: &str) -> PyResult<(f64, (usize, usize, usize))> {
    let rep = metrics::wer(
        &metrics::WordSequence::parse(reference),
        &metrics::WordSequence::parse(hypothesis),
    )
    .map_err(to_py)?;
    Ok((rep.rate, (rep.substitutions, rep.insertions, rep.deletions)))
}

/// Two-speaker synthetic fixture and its reference RTTM text.
#[pyfunction]
#[pyo3(signature = (seed = 1, total_s = None))]
fn synth_two_speaker(seed: u64, total_s: Option<f64>) -> PyResult<(PyAudioBuffer, String)> {
    let spec = match total_s {
        Some(t) => pipeline::SynthSpec::two_speaker_long(seed, t),
        None => pipeline::SynthSpec::two_speaker(seed),
    };
    let (inner, truth) = pipeline::synth_fixture(&spec).map_err(to_py)?;
    let d = pipeline::Diarization::new(
        "synth",
        truth
            .entries()
            .iter()
            .map(|(a, b, s)| pipeline::Turn {
                onset_s: *a,
                duration_s: b - a,
                speaker: s.clone(),
            })
            .collect(),
    )
    .map_err(to_py)?;
    Ok((PyAudioBuffer { inner }, pipeline::rttm_string(&d)))
}

/// Run the whole pipeline on a WAV file.
#[pyfunction]
#[pyo3(signature = (path, config = None))]
fn diarize_file(py: Python<'_>, path: &str, config: Option<&PyPipelineConfig>) -> PyResult<PyDiarization> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    py.detach(|| pipeline::run_pipeline(path, &cfg))
        .map(|inner| PyDiarization { inner })
        .map_err(to_py)
}

/// Run the whole pipeline on samples already in memory.
#[pyfunction]
#[pyo3(signature = (audio, file_id = "audio", config = None))]
fn diarize(
    py: Python<'_>,
    audio: &PyAudioBuffer,
    file_id: &str,
    config: Option<&PyPipelineConfig>,
) -> PyResult<PyDiarization> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    py.detach(|| pipeline::diarize_buffer(&audio.inner, file_id, &cfg))
        .map(|out| PyDiarization {
            inner: out.diarization,
        })
        .map_err(to_py)
}

#[pymodule]
fn diarkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DiarkitError", m.py().get_type::<DiarkitError>())?;
    m.add_class::<PyAudioBuffer>()?;
    m.add_class::<PyPipelineConfig>()?;
    m.add_class::<PyDiarization>()?;
    m.add_class::<PyGaussianMixture>()?;
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(detect_speech, m)?)?;
    m.add_function(wrap_pyfunction!(delta_bic, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_distance, m)?)?;
    m.add_function(wrap_pyfunction!(der, m)?)?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(synth_two_speaker, m)?)?;
    m.add_function(wrap_pyfunction!(diarize_file, m)?)?;
    m.add_function(wrap_pyfunction!(diarize, m)?)?;
    Ok(())
}
