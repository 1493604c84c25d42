//! Python bindings for `pvcohort-core`.
//!
//! Records (matches, lexicon entries, test results) cross the boundary as
//! plain dicts and lists decoded from their JSON form.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyList;
use serde::Serialize;

use pvcohort_core::annotation;
use pvcohort_core::classifier::{self, FeatureConfig, Label, LabeledPost, Optimizer};
use pvcohort_core::corpus::{Post, UserProfile};
use pvcohort_core::lexicon::{self, LexiconEntry};
use pvcohort_core::matcher::{self, MatcherConfig};
use pvcohort_core::metrics;
use pvcohort_core::stats;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn parse_label(s: &str) -> PyResult<Label> {
    match s {
        "S" => Ok(Label::S),
        "NR" => Ok(Label::Nr),
        other => Err(PyValueError::new_err(format!("label must be \"S\" or \"NR\", got {other:?}"))),
    }
}

/// Lowercased tokens and the per-token post-boundary flags.
#[pyfunction]
fn normalize(text: &str) -> (Vec<String>, Vec<bool>) {
    let seq = matcher::normalize(text);
    (seq.tokens, seq.boundary_flags)
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    matcher::levenshtein(a, b)
}

/// `1 - d / max(len)`, 1.0 for two empty strings.
#[pyfunction]
fn similarity(a: &str, b: &str) -> f64 {
    matcher::similarity(a, b)
}

/// An immutable lexicon version.
#[pyclass(frozen, module = "pvcohort")]
struct Lexicon {
    inner: lexicon::LexiconVersion,
}

#[pymethods]
impl Lexicon {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = lexicon::LexiconVersion::from_reader(text.as_bytes()).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = lexicon::load_lexicon(&path).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Builds version `version` from entry dicts.
    #[staticmethod]
    #[pyo3(signature = (entries, version = 1))]
    fn from_entries(entries: &Bound<'_, PyAny>, version: u64) -> PyResult<Self> {
        let entries: Vec<LexiconEntry> = from_py(entries)?;
        let inner = lexicon::LexiconVersion::seed(version, entries).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn version(&self) -> u64 {
        self.inner.version()
    }

    #[getter]
    fn parent(&self) -> Option<u64> {
        self.inner.parent()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn entry_ids(&self) -> Vec<String> {
        self.inner.entries().map(|e| e.entry_id.clone()).collect()
    }

    fn entry<'py>(&self, py: Python<'py>, entry_id: &str) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner.get(entry_id).map(|e| to_py(py, e)).transpose()
    }

    fn changelog<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.changelog())
    }

    /// Next version with the given entries added from annotation round `round`.
    fn enrich(&self, additions: &Bound<'_, PyAny>, round: u32) -> PyResult<Self> {
        let additions: Vec<LexiconEntry> = from_py(additions)?;
        let inner = lexicon::enrich(&self.inner, &additions, round).map_err(value_error)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_pretty()
    }

    fn __repr__(&self) -> String {
        format!("Lexicon(version={}, entries={})", self.inner.version(), self.inner.len())
    }
}

#[pyclass(frozen, module = "pvcohort")]
struct Matcher {
    inner: matcher::Matcher,
}

#[pymethods]
impl Matcher {
    #[new]
    #[pyo3(signature = (lexicon, similarity_threshold = 0.85, window_min = 1, window_max = 9, negation_window = 3, negation_triggers = None))]
    fn new(
        lexicon: &Lexicon,
        similarity_threshold: f64,
        window_min: usize,
        window_max: usize,
        negation_window: usize,
        negation_triggers: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let mut cfg = MatcherConfig {
            similarity_threshold,
            window_min,
            window_max,
            negation_window,
            ..MatcherConfig::default()
        };
        if let Some(t) = negation_triggers {
            cfg.negation_triggers = t;
        }
        let inner = matcher::Matcher::new(&lexicon.inner, cfg).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn lexicon_version(&self) -> u64 {
        self.inner.lexicon_version()
    }

    /// Matches in a single text.
    fn match_text<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.match_text(text))
    }

    /// Matches in one user's posts, collapsed in the given order.
    fn match_posts<'py>(&self, py: Python<'py>, user_id: &str, posts: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
        let posts: Vec<Post> = posts
            .into_iter()
            .enumerate()
            .map(|(k, text)| Post {
                id: format!("{user_id}-{k}"),
                user_id: user_id.to_string(),
                timestamp: chrono::DateTime::UNIX_EPOCH + chrono::Duration::seconds(k as i64),
                text,
            })
            .collect();
        let profile = UserProfile::from_posts(posts).unwrap_or_else(|| UserProfile::from_text(user_id, ""));
        to_py(py, &self.inner.match_profile(&profile))
    }
}

/// A fitted TF-IDF logistic regression post classifier.
#[pyclass(frozen, module = "pvcohort")]
struct PostClassifier {
    inner: classifier::LinearModel,
}

#[pymethods]
impl PostClassifier {
    #[staticmethod]
    #[pyo3(signature = (texts, labels, l2 = 0.01, ngram_min = 1, ngram_max = 2, use_length = true))]
    fn fit(
        texts: Vec<String>,
        labels: Vec<String>,
        l2: f64,
        ngram_min: usize,
        ngram_max: usize,
        use_length: bool,
    ) -> PyResult<Self> {
        let labels = labels.iter().map(|l| parse_label(l)).collect::<PyResult<Vec<_>>>()?;
        let cfg = FeatureConfig {
            ngram_min,
            ngram_max,
            use_length,
            ..FeatureConfig::default()
        };
        let inner = classifier::LinearModel::fit(&texts, &labels, &cfg, l2, Optimizer::default()).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = classifier::LinearModel::from_json(text).map_err(value_error)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Probability of label S.
    fn score(&self, text: &str) -> f64 {
        self.inner.score(text)
    }

    fn predict(&self, text: &str) -> &'static str {
        self.inner.predict(text).0.as_str()
    }
}

/// Accuracy and S-class precision, recall and F1 of parallel label lists.
#[pyfunction]
fn evaluate_labels<'py>(py: Python<'py>, predicted: Vec<String>, gold: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    if predicted.len() != gold.len() {
        return Err(value_error(format!("{} predictions but {} gold labels", predicted.len(), gold.len())));
    }
    let wrap = |labels: &[String]| {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| Ok(LabeledPost::new(&i.to_string(), parse_label(l)?)))
            .collect::<PyResult<Vec<_>>>()
    };
    let m = classifier::evaluate(&wrap(&predicted)?, &wrap(&gold)?).map_err(value_error)?;
    to_py(py, &m)
}

#[pyfunction]
fn prf<'py>(py: Python<'py>, tp: usize, fp: usize, fn_: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::Prf::from_counts(tp, fp, fn_))
}

#[pyfunction]
fn cohens_kappa(a: Vec<bool>, b: Vec<bool>) -> PyResult<f64> {
    annotation::cohens_kappa(&a, &b).map_err(value_error)
}

/// κ from a 2×2 table; None when undefined.
#[pyfunction]
fn kappa_from_counts(both_yes: usize, a_only: usize, b_only: usize, both_no: usize) -> Option<f64> {
    annotation::kappa_from_counts(both_yes, a_only, b_only, both_no)
}

/// `(H, df, p)` with tie correction.
#[pyfunction]
fn kruskal_wallis(groups: Vec<Vec<f64>>) -> PyResult<(f64, u32, f64)> {
    let kw = stats::kruskal_wallis(&groups).map_err(value_error)?;
    Ok((kw.h, kw.df, kw.p))
}

#[pyfunction]
#[pyo3(signature = (groups, n_perm = 1000, seed = 0))]
fn kruskal_wallis_permutation_p(groups: Vec<Vec<f64>>, n_perm: usize, seed: u64) -> PyResult<f64> {
    stats::kruskal_wallis_permutation_p(&groups, n_perm, seed).map_err(value_error)
}

#[pyfunction]
fn benjamini_hochberg(pvalues: Vec<f64>) -> PyResult<Vec<f64>> {
    stats::benjamini_hochberg(&pvalues).map_err(value_error)
}

/// Pairwise Dunn comparisons as dicts with `z`, `p` and `p_adjusted`.
#[pyfunction]
fn dunn_test<'py>(py: Python<'py>, groups: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyList>> {
    let out = PyList::empty(py);
    for c in stats::dunn_test(&groups).map_err(value_error)? {
        out.append(to_py(py, &c)?)?;
    }
    Ok(out)
}

#[pyfunction]
fn chi_square_sf(x: f64, df: u32) -> f64 {
    stats::chi_square_sf(x, df)
}

#[pymodule]
fn pvcohort(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Lexicon>()?;
    m.add_class::<Matcher>()?;
    m.add_class::<PostClassifier>()?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_labels, m)?)?;
    m.add_function(wrap_pyfunction!(prf, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(kruskal_wallis, m)?)?;
    m.add_function(wrap_pyfunction!(kruskal_wallis_permutation_p, m)?)?;
    m.add_function(wrap_pyfunction!(benjamini_hochberg, m)?)?;
    m.add_function(wrap_pyfunction!(dunn_test, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_sf, m)?)?;
    Ok(())
}
