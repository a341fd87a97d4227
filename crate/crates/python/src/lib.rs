//! Python bindings: corpora, encoders, indexes, beam retrieval, training and evaluation.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mdr_core::corpus::{load_corpus, Corpus, Passage};
use mdr_core::encoder::{Encoder, EncoderSpec, HashedEncoder, QueryInput};
use mdr_core::eval::{evaluate as eval_records, load_eval_records, EvalConfig, EvalRecord};
use mdr_core::index::{load_index, save_index, FlatIndex, HnswIndex, HnswParams, MipsIndex, VectorIndex};
use mdr_core::retriever::{retrieve as beam_retrieve, BeamConfig};
use mdr_core::trainer::{generate_synthetic_task, load_examples, load_model, save_model, train as train_model, TrainConfig, TrainingExample};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

#[pyclass(name = "Corpus", module = "mdr", frozen)]
struct PyCorpus {
    inner: Arc<Corpus>,
}

#[pymethods]
impl PyCorpus {
    /// `passages` is a list of `(id, title, text)` tuples.
    #[new]
    fn new(passages: Vec<(String, String, String)>) -> PyResult<Self> {
        let ps = passages.into_iter().map(|(id, title, text)| Passage::new(id, title, text)).collect();
        Ok(PyCorpus {
            inner: Arc::new(Corpus::from_passages(ps).map_err(err)?),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: Arc::new(load_corpus(path).map_err(err)?),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(id, title, text)` of the passage at `ordinal`.
    fn __getitem__(&self, ordinal: usize) -> PyResult<(String, String, String)> {
        let p = self
            .inner
            .passages()
            .get(ordinal)
            .ok_or_else(|| PyIndexError::new_err(format!("no passage at {ordinal}")))?;
        Ok((p.id.clone(), p.title.clone(), p.text.clone()))
    }

    /// Ordinal of the passage with this id, or None.
    fn ordinal(&self, id: &str) -> Option<usize> {
        self.inner.handle(id).map(|h| h.0)
    }

    /// Top-`k` TF-IDF passages as `(id, score)`.
    fn tfidf(&self, query: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let hits = self.inner.tfidf_scores(query, k).map_err(err)?;
        Ok(hits
            .into_iter()
            .map(|(h, s)| (self.inner.passages()[h.0].id.clone(), s))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} passages)", self.inner.len())
    }
}

#[pyclass(name = "Encoder", module = "mdr", frozen)]
struct PyEncoder {
    inner: EncoderSpec,
}

#[pymethods]
impl PyEncoder {
    #[staticmethod]
    #[pyo3(signature = (dimension, seed = 0))]
    fn hashed(dimension: usize, seed: u64) -> PyResult<Self> {
        Ok(PyEncoder {
            inner: EncoderSpec::Hashed(HashedEncoder::new(dimension, seed).map_err(err)?),
        })
    }

    /// A trained model file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEncoder {
            inner: EncoderSpec::Linear(Arc::new(load_model(path).map_err(err)?)),
        })
    }

    /// Writes a trained model; hashed encoders have nothing to save.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        match &self.inner {
            EncoderSpec::Linear(m) => save_model(m, path).map_err(err),
            other => Err(PyValueError::new_err(format!("a {} encoder has no model file", other.kind()))),
        }
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    /// Query vector for `question` after the passages in `prior` (by ordinal).
    #[pyo3(signature = (question, corpus = None, prior = Vec::new()))]
    fn encode_query(&self, question: &str, corpus: Option<&PyCorpus>, prior: Vec<usize>) -> PyResult<Vec<f32>> {
        let passages: Vec<&Passage> = match corpus {
            Some(c) => prior
                .iter()
                .map(|&i| c.inner.passages().get(i).ok_or_else(|| PyIndexError::new_err(format!("no passage at {i}"))))
                .collect::<PyResult<_>>()?,
            None if prior.is_empty() => Vec::new(),
            None => return Err(PyValueError::new_err("prior passages need a corpus")),
        };
        let v = self.inner.encode_query(&QueryInput::new(question, &passages)).map_err(err)?;
        Ok(v.into_values())
    }

    fn encode_passages(&self, py: Python<'_>, corpus: &PyCorpus) -> PyResult<Vec<Vec<f32>>> {
        let vs = py
            .detach(|| self.inner.encode_passages(corpus.inner.passages()))
            .map_err(err)?;
        Ok(vs.into_iter().map(|v| v.into_values()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Encoder(kind={:?}, dimension={})", self.inner.kind(), self.inner.dimension())
    }
}

#[pyclass(name = "Index", module = "mdr")]
struct PyIndex {
    inner: VectorIndex,
}

fn hnsw_or_flat(flat: FlatIndex, hnsw: bool, m_links: usize, ef_construction: usize, seed: u64) -> PyResult<VectorIndex> {
    if !hnsw {
        return Ok(VectorIndex::Flat(flat));
    }
    let params = HnswParams {
        m_links,
        ef_construction,
        seed,
        ..HnswParams::default()
    };
    Ok(VectorIndex::Hnsw(HnswIndex::build(flat, params).map_err(err)?))
}

#[pymethods]
impl PyIndex {
    /// Encodes `corpus` with `encoder` and indexes the vectors.
    #[staticmethod]
    #[pyo3(signature = (corpus, encoder, hnsw = false, m_links = 16, ef_construction = 200, seed = 0))]
    fn build(
        py: Python<'_>,
        corpus: &PyCorpus,
        encoder: &PyEncoder,
        hnsw: bool,
        m_links: usize,
        ef_construction: usize,
        seed: u64,
    ) -> PyResult<Self> {
        py.detach(|| {
            let vectors = encoder.inner.encode_passages(corpus.inner.passages()).map_err(err)?;
            let ids = corpus.inner.passages().iter().map(|p| p.id.clone()).collect();
            let flat = FlatIndex::from_vectors(&vectors, ids).map_err(err)?;
            Ok(PyIndex {
                inner: hnsw_or_flat(flat, hnsw, m_links, ef_construction, seed)?,
            })
        })
    }

    /// Indexes raw rows; ids default to the row numbers.
    #[staticmethod]
    #[pyo3(signature = (rows, ids = None, hnsw = false, m_links = 16, ef_construction = 200, seed = 0))]
    fn from_vectors(
        py: Python<'_>,
        rows: Vec<Vec<f32>>,
        ids: Option<Vec<String>>,
        hnsw: bool,
        m_links: usize,
        ef_construction: usize,
        seed: u64,
    ) -> PyResult<Self> {
        py.detach(|| {
            let ids = ids.unwrap_or_else(|| (0..rows.len()).map(|i| i.to_string()).collect());
            let flat = FlatIndex::build(&rows, ids).map_err(err)?;
            Ok(PyIndex {
                inner: hnsw_or_flat(flat, hnsw, m_links, ef_construction, seed)?,
            })
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyIndex {
            inner: load_index(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_index(&self.inner, path).map_err(err)
    }

    /// Top-`k` rows by inner product as `(ordinal, id, score)`.
    fn search(&self, query: Vec<f32>, k: usize) -> PyResult<Vec<(usize, String, f32)>> {
        let hits = self.inner.search(&query, k).map_err(err)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let id = self.inner.id(h.handle).unwrap_or_default().to_string();
                (h.handle.0, id, h.score)
            })
            .collect())
    }

    fn set_ef_search(&mut self, ef_search: usize) -> PyResult<()> {
        match &mut self.inner {
            VectorIndex::Hnsw(h) if ef_search > 0 => {
                h.set_ef_search(ef_search);
                Ok(())
            }
            VectorIndex::Hnsw(_) => Err(PyValueError::new_err("ef_search must be at least 1")),
            VectorIndex::Flat(_) => Err(PyValueError::new_err("flat indexes have no ef_search")),
        }
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Index(kind={:?}, len={}, dimension={})", self.inner.kind(), self.inner.len(), self.inner.dimension())
    }
}

#[pyclass(name = "TrainingSet", module = "mdr", frozen)]
struct PyTrainingSet {
    inner: Arc<Vec<TrainingExample>>,
}

#[pymethods]
impl PyTrainingSet {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainingSet {
            inner: Arc::new(load_examples(path).map_err(err)?),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(question, answer, [positive ids])` of one example.
    fn __getitem__(&self, i: usize) -> PyResult<(String, String, Vec<String>)> {
        let ex = self.inner.get(i).ok_or_else(|| PyIndexError::new_err(format!("no example {i}")))?;
        Ok((ex.question.clone(), ex.answer.clone(), ex.positives.iter().map(|p| p.id.clone()).collect()))
    }
}

#[pyclass(name = "EvalSet", module = "mdr", frozen)]
struct PyEvalSet {
    inner: Arc<Vec<EvalRecord>>,
}

#[pymethods]
impl PyEvalSet {
    /// `records` is a list of `(question, answer, [gold ids])` tuples.
    #[new]
    fn new(records: Vec<(String, String, Vec<String>)>) -> Self {
        let inner = records
            .into_iter()
            .map(|(question, answer, gold_ids)| EvalRecord {
                question,
                answer,
                gold_ids,
                qtype: None,
            })
            .collect();
        PyEvalSet { inner: Arc::new(inner) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEvalSet {
            inner: Arc::new(load_eval_records(path).map_err(err)?),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __getitem__(&self, i: usize) -> PyResult<(String, String, Vec<String>)> {
        let r = self.inner.get(i).ok_or_else(|| PyIndexError::new_err(format!("no record {i}")))?;
        Ok((r.question.clone(), r.answer.clone(), r.gold_ids.clone()))
    }
}

#[pyclass(name = "SyntheticTask", module = "mdr", frozen)]
struct PySyntheticTask {
    #[pyo3(get)]
    corpus: Py<PyCorpus>,
    #[pyo3(get)]
    train: Py<PyTrainingSet>,
    #[pyo3(get)]
    dev: Py<PyEvalSet>,
}

/// Generated 2-hop corpus with train and dev splits.
#[pyfunction]
#[pyo3(signature = (entities = 200, relations = 5, seed = 0))]
fn generate_synthetic(py: Python<'_>, entities: usize, relations: usize, seed: u64) -> PyResult<PySyntheticTask> {
    let task = generate_synthetic_task(entities, relations, seed).map_err(err)?;
    Ok(PySyntheticTask {
        corpus: Py::new(py, PyCorpus { inner: Arc::new(task.corpus) })?,
        train: Py::new(py, PyTrainingSet { inner: Arc::new(task.train) })?,
        dev: Py::new(py, PyEvalSet { inner: Arc::new(task.dev) })?,
    })
}

/// Chains for `question`, best first, as dicts with ids, ordinals and scores.
#[pyfunction]
#[pyo3(signature = (question, corpus, index, encoder, hops = 2, beam = 10, k_out = 10))]
#[allow(clippy::too_many_arguments)]
fn retrieve<'py>(
    py: Python<'py>,
    question: &str,
    corpus: &PyCorpus,
    index: &PyIndex,
    encoder: &PyEncoder,
    hops: usize,
    beam: usize,
    k_out: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = BeamConfig {
        hops,
        beam_width: beam,
        k_out,
        ..BeamConfig::default()
    };
    let chains = beam_retrieve(question, &corpus.inner, &index.inner, &encoder.inner, &config, None).map_err(err)?;
    chains
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            let ordinals: Vec<usize> = c.passages.iter().map(|h| h.0).collect();
            let ids: Vec<String> = ordinals.iter().map(|&i| corpus.inner.passages()[i].id.clone()).collect();
            d.set_item("ids", ids)?;
            d.set_item("ordinals", ordinals)?;
            d.set_item("hop_scores", c.hop_scores.clone())?;
            d.set_item("total_score", c.total_score)?;
            Ok(d)
        })
        .collect()
}

/// Trains a linear encoder; returns it with the training log as a dict.
#[pyfunction]
#[pyo3(signature = (
    examples, corpus = None, dimension = None, epochs = None, bank_epochs = None,
    learning_rate = None, seed = 0, shared = true, memory_bank = true, ordered = true
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    examples: &PyTrainingSet,
    corpus: Option<&PyCorpus>,
    dimension: Option<usize>,
    epochs: Option<usize>,
    bank_epochs: Option<usize>,
    learning_rate: Option<f64>,
    seed: u64,
    shared: bool,
    memory_bank: bool,
    ordered: bool,
) -> PyResult<(PyEncoder, Bound<'py, PyAny>)> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        dimension: dimension.unwrap_or(d.dimension),
        epochs: epochs.unwrap_or(d.epochs),
        bank_epochs: bank_epochs.unwrap_or(d.bank_epochs),
        learning_rate: learning_rate.unwrap_or(d.learning_rate),
        seed,
        shared_encoder: shared,
        use_memory_bank: memory_bank,
        ordered,
        ..d
    };
    let corpus = corpus.map(|c| c.inner.clone());
    let trained = py
        .detach(|| train_model(&examples.inner, corpus.as_deref(), &config))
        .map_err(err)?;
    let log = serde_json::to_string(&trained.log).map_err(err)?;
    Ok((
        PyEncoder {
            inner: EncoderSpec::Linear(Arc::new(trained.encoder)),
        },
        json_to_py(py, &log)?,
    ))
}

/// Metrics report as a dict.
#[pyfunction]
#[pyo3(signature = (records, corpus, index, encoder, k_list = vec![2, 10, 20], hops = 2, beam = 10))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    records: &PyEvalSet,
    corpus: &PyCorpus,
    index: &PyIndex,
    encoder: &PyEncoder,
    k_list: Vec<usize>,
    hops: usize,
    beam: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let config = EvalConfig {
        k_list,
        beam: BeamConfig {
            hops,
            beam_width: beam,
            ..BeamConfig::default()
        },
        ..EvalConfig::default()
    };
    let report = py
        .detach(|| eval_records(&records.inner, &corpus.inner, &index.inner, &encoder.inner, &config, None, None))
        .map_err(err)?;
    json_to_py(py, &report.to_json())
}

#[pymodule]
fn mdr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyTrainingSet>()?;
    m.add_class::<PyEvalSet>()?;
    m.add_class::<PySyntheticTask>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
