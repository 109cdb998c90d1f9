//! Python bindings: `import pyjointparse`.

use jointparse::checkpoint;
use jointparse::conllu::{read_treebank_file, split_9_1, write_treebank, Sentence, TagColumn};
use jointparse::decoder::{self, ArcScoreMatrix, RootConstraint};
use jointparse::lexicon::Lexicon;
use jointparse::metrics::{self, PunctConvention};
use jointparse::network::{Hyperparams, JointModel};
use jointparse::trainer::Trainer;
use jointparse::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};
use serde_json::Value;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_)) => {
            PyArithmeticError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_json(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_instance_of::<PyBool>() {
        Ok(Value::Bool(obj.extract()?))
    } else if obj.is_instance_of::<PyInt>() {
        Ok(Value::from(obj.extract::<i64>()?))
    } else if obj.is_instance_of::<PyFloat>() {
        Ok(Value::from(obj.extract::<f64>()?))
    } else if obj.is_instance_of::<PyString>() {
        Ok(Value::String(obj.extract()?))
    } else {
        Err(PyValueError::new_err(format!(
            "unsupported hyperparameter value {obj}"
        )))
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(a) => {
            let items = a
                .iter()
                .map(|x| to_py(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn hyper_from(config: Option<&Bound<'_, PyDict>>) -> PyResult<Hyperparams> {
    let mut map = serde_json::Map::new();
    if let Some(d) = config {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = if key == "tag_column" {
                let s: String = v.extract()?;
                let col: TagColumn = s.parse().map_err(PyValueError::new_err)?;
                serde_json::to_value(col).map_err(|e| PyValueError::new_err(e.to_string()))?
            } else {
                to_json(&v)?
            };
            map.insert(key, value);
        }
    }
    let hyper: Hyperparams = serde_json::from_value(Value::Object(map))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    hyper.validate().map_err(py_err)?;
    Ok(hyper)
}

fn parse_column(s: &str) -> PyResult<TagColumn> {
    s.parse().map_err(PyValueError::new_err)
}

/// A trained joint tagger and parser.
#[pyclass(module = "pyjointparse")]
struct Model {
    inner: JointModel,
}

#[pymethods]
impl Model {
    /// Trains on a CoNLL-U file and returns the model with the best dev
    /// mixed accuracy, together with the per-epoch log.
    #[staticmethod]
    #[pyo3(signature = (train_path, dev_path=None, hyper=None, log_path=None))]
    fn train<'py>(
        py: Python<'py>,
        train_path: &str,
        dev_path: Option<&str>,
        hyper: Option<&Bound<'py, PyDict>>,
        log_path: Option<&str>,
    ) -> PyResult<(Model, Bound<'py, PyAny>)> {
        let hyper = hyper_from(hyper)?;
        let corpus = read_treebank_file(train_path).map_err(py_err)?;
        let (train, dev) = match dev_path {
            Some(p) => (corpus, read_treebank_file(p).map_err(py_err)?),
            None => split_9_1(&corpus, hyper.seed).map_err(py_err)?,
        };
        let lexicon = Lexicon::build(&train, hyper.tag_column).map_err(py_err)?;
        let model = JointModel::new(hyper, lexicon).map_err(py_err)?;
        let mut trainer = Trainer::new(model, &train, dev).map_err(py_err)?;
        if let Some(p) = log_path {
            let f = std::fs::File::create(p)?;
            trainer = trainer.with_log_sink(Box::new(f), true).map_err(py_err)?;
        }
        trainer.run(|_, _| Ok(())).map_err(py_err)?;
        let log = serde_json::to_value(&trainer.progress().log)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let log = to_py(py, &log)?;
        let best = trainer.into_best().expect("at least one epoch ran");
        Ok((Model { inner: best }, log))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        Ok(Model {
            inner: checkpoint::load(path).map_err(py_err)?.model,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(path, &self.inner, None).map_err(py_err)
    }

    /// Tags and parses one tokenised sentence; returns `(tags, heads, relations)`.
    fn predict(&self, forms: Vec<String>) -> PyResult<(Vec<String>, Vec<usize>, Vec<String>)> {
        if forms.is_empty() {
            return Ok((vec![], vec![], vec![]));
        }
        let p = self
            .inner
            .predict(&Sentence::from_forms(&forms))
            .map_err(py_err)?;
        Ok((p.tags, p.tree.heads, p.tree.rels))
    }

    /// Writes predictions for every sentence of a CoNLL-U file.
    fn predict_file(&self, input: &str, output: &str) -> PyResult<()> {
        let sentences = read_treebank_file(input).map_err(py_err)?;
        let preds = self.inner.predict_all(&sentences).map_err(py_err)?;
        let mut buf = Vec::new();
        write_treebank(
            &mut buf,
            &sentences,
            Some(&preds),
            self.inner.hyper().tag_column,
        )
        .map_err(py_err)?;
        checkpoint::write_atomic(std::path::Path::new(output), &buf).map_err(py_err)
    }

    #[getter]
    fn hyper<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v = serde_json::to_value(self.inner.hyper())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        to_py(py, &v)
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.inner.lexicon().tags().to_vec()
    }

    #[getter]
    fn relations(&self) -> Vec<String> {
        self.inner.lexicon().rels().to_vec()
    }

    #[getter]
    fn num_weights(&self) -> usize {
        self.inner.params().num_weights()
    }

    fn __repr__(&self) -> String {
        let h = self.inner.hyper();
        format!(
            "Model(layers={}, hidden={}, tags={}, relations={}, weights={})",
            h.lstm_layers,
            h.lstm_hidden,
            self.inner.lexicon().num_tags(),
            self.inner.lexicon().num_rels(),
            self.inner.params().num_weights()
        )
    }
}

/// Best projective tree for an `(n+1) x (n+1)` matrix `scores[head][modifier]`.
/// Column 0 and the diagonal are ignored. Returns `(heads, score)`.
#[pyfunction]
#[pyo3(signature = (scores, multi_root=false))]
fn eisner_decode(scores: Vec<Vec<f64>>, multi_root: bool) -> PyResult<(Vec<usize>, f64)> {
    let size = scores.len();
    if size < 2 || scores.iter().any(|r| r.len() != size) {
        return Err(PyValueError::new_err(
            "scores must be a square matrix of size n+1 >= 2",
        ));
    }
    let m = ArcScoreMatrix::from_fn(size - 1, |h, d| scores[h][d]);
    let root = if multi_root {
        RootConstraint::Multi
    } else {
        RootConstraint::Single
    };
    let d = decoder::eisner_decode_with(&m, root).map_err(py_err)?;
    Ok((d.heads, d.score))
}

/// Scores a system CoNLL-U file against gold.
#[pyfunction]
#[pyo3(signature = (gold_path, system_path, punct=None, tag_column="upos"))]
fn evaluate<'py>(
    py: Python<'py>,
    gold_path: &str,
    system_path: &str,
    punct: Option<&str>,
    tag_column: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let column = parse_column(tag_column)?;
    let convention = match punct {
        Some(p) => p.parse::<PunctConvention>().map_err(py_err)?,
        None => PunctConvention::default_for(column),
    };
    let gold = read_treebank_file(gold_path).map_err(py_err)?;
    let system = read_treebank_file(system_path).map_err(py_err)?;
    let r = metrics::evaluate_sentences(&gold, &system, column, convention).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("convention", convention.to_string())?;
    d.set_item("tokens", r.all.tokens)?;
    d.set_item("tokens_no_punct", r.no_punct.tokens)?;
    d.set_item("pos", r.pos())?;
    d.set_item("uas", r.uas())?;
    d.set_item("las", r.las())?;
    d.set_item("uas_all", r.all.uas())?;
    d.set_item("las_all", r.all.las())?;
    d.set_item("mixed", r.mixed())?;
    Ok(d)
}

/// Reads a CoNLL-U file into lists of token dicts (word lines only).
#[pyfunction]
fn read_conllu<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyList>> {
    let sentences = read_treebank_file(path).map_err(py_err)?;
    let out = PyList::empty(py);
    for s in &sentences {
        let toks = PyList::empty(py);
        for t in &s.tokens {
            let d = PyDict::new(py);
            d.set_item("id", t.id)?;
            d.set_item("form", &t.form)?;
            d.set_item("lemma", &t.lemma)?;
            d.set_item("upos", &t.upos)?;
            d.set_item("xpos", &t.xpos)?;
            d.set_item("head", t.head)?;
            d.set_item("deprel", t.deprel.as_deref())?;
            toks.append(d)?;
        }
        out.append(toks)?;
    }
    Ok(out)
}

#[pymodule]
fn pyjointparse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(eisner_decode, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(read_conllu, m)?)?;
    Ok(())
}
