use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mttdsc::datasets::{self, Dataset, ScInstance, TargetedInstance, VocabSpec};
use mttdsc::embeddings::{load_embeddings_text, EmbeddingTable};
use mttdsc::evaluation::{self, Estimate, EvalPair};
use mttdsc::gradcheck::{run_gradcheck, GradcheckProfile};
use mttdsc::models::{Predictor, TargetSpan, Variant};
use mttdsc::numerics::Label;
use mttdsc::sensitivity::{occlusion_scores, render_heatmap, HeatmapFormat};
use mttdsc::training::{self, Checkpoint, TrainConfig, TrainData};
use mttdsc::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numeric(m) => PyRuntimeError::new_err(format!("numeric error: {m}")),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn label(v: i64) -> PyResult<Label> {
    Label::from_value(v).map_err(py_err)
}

#[derive(FromPyObject)]
struct PyTargeted {
    #[pyo3(item)]
    tokens: Vec<String>,
    #[pyo3(item)]
    target_start: usize,
    #[pyo3(item)]
    target_end: usize,
    #[pyo3(item)]
    label: i64,
}

impl PyTargeted {
    fn into_instance(self) -> PyResult<TargetedInstance> {
        let inst = TargetedInstance {
            tokens: self.tokens,
            target_start: self.target_start,
            target_end: self.target_end,
            label: label(self.label)?,
        };
        inst.validate().map_err(py_err)?;
        Ok(inst)
    }
}

#[derive(FromPyObject)]
struct PyPassage {
    #[pyo3(item)]
    tokens: Vec<String>,
    #[pyo3(item)]
    label: i64,
}

fn targeted(items: Vec<PyTargeted>) -> PyResult<Vec<TargetedInstance>> {
    items.into_iter().map(PyTargeted::into_instance).collect()
}

fn passages(items: Vec<PyPassage>) -> PyResult<Vec<ScInstance>> {
    items
        .into_iter()
        .map(|p| {
            Ok(ScInstance {
                tokens: p.tokens,
                label: label(p.label)?,
            })
        })
        .collect()
}

fn targeted_dict<'py>(py: Python<'py>, inst: &TargetedInstance) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tokens", &inst.tokens)?;
    d.set_item("target_start", inst.target_start)?;
    d.set_item("target_end", inst.target_end)?;
    d.set_item("label", inst.label.value())?;
    Ok(d)
}

fn passage_dict<'py>(py: Python<'py>, inst: &ScInstance) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tokens", &inst.tokens)?;
    d.set_item("label", inst.label.value())?;
    Ok(d)
}

/// Lower-cases and splits off punctuation.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    datasets::tokenize(text)
}

#[pyclass(name = "EmbeddingTable", module = "mttdsc_py")]
struct PyEmbeddingTable {
    inner: EmbeddingTable,
}

#[pymethods]
impl PyEmbeddingTable {
    /// Reads a whitespace-separated text file: `word v1 ... vd` per line.
    #[staticmethod]
    #[pyo3(signature = (path, dim=None))]
    fn load(path: PathBuf, dim: Option<usize>) -> PyResult<Self> {
        let file = File::open(&path)
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        let inner = load_embeddings_text(BufReader::new(file), dim).map_err(py_err)?;
        Ok(PyEmbeddingTable { inner })
    }

    #[staticmethod]
    fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> PyResult<Self> {
        let inner = EmbeddingTable::from_rows(dim, rows).map_err(py_err)?;
        Ok(PyEmbeddingTable { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.vocab().len()
    }

    fn __contains__(&self, token: &str) -> bool {
        self.inner.vocab().contains(token)
    }

    /// The vector for `token`; unknown words map to the zero UNK row.
    fn lookup(&self, token: &str) -> Vec<f64> {
        self.inner.lookup(token).to_vec()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let file = File::create(&path)
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        self.inner
            .write_text(std::io::BufWriter::new(file))
            .map_err(py_err)
    }
}

type Records<'py> = Vec<Bound<'py, PyDict>>;

/// Synthetic corpus: returns `(main, aux, embeddings)` with instances as dicts.
#[pyfunction]
#[pyo3(signature = (seed=0, n_main=232, n_aux=2000))]
fn synth_corpus<'py>(
    py: Python<'py>,
    seed: u64,
    n_main: usize,
    n_aux: usize,
) -> PyResult<(Records<'py>, Records<'py>, PyEmbeddingTable)> {
    let c = datasets::synth_corpus(seed, n_main, n_aux, &VocabSpec::default()).map_err(py_err)?;
    let main = c
        .main
        .iter()
        .map(|i| targeted_dict(py, i))
        .collect::<PyResult<_>>()?;
    let aux = c
        .aux
        .iter()
        .map(|i| passage_dict(py, i))
        .collect::<PyResult<_>>()?;
    Ok((
        main,
        aux,
        PyEmbeddingTable {
            inner: c.embeddings,
        },
    ))
}

fn train_config(config: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let Some(config) = config else {
        return Ok(TrainConfig::default());
    };
    let json = config
        .py()
        .import("json")?
        .call_method1("dumps", (config,))?;
    let cfg: TrainConfig = serde_json::from_str(&json.extract::<String>()?)
        .map_err(|e| PyValueError::new_err(format!("bad config: {e}")))?;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

#[pyclass(name = "Model", module = "mttdsc_py")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: training::load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        training::save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn best_epoch(&self) -> Option<usize> {
        self.inner.history.best_epoch
    }

    /// Per-epoch objective values of the training run.
    fn objectives(&self) -> Vec<f64> {
        self.inner
            .history
            .epochs
            .iter()
            .map(|e| e.objective)
            .collect()
    }

    /// `(p_neg, p_neu, p_pos)` for a target span (1-based, inclusive).
    fn predict(
        &self,
        table: &PyEmbeddingTable,
        tokens: Vec<String>,
        target_start: usize,
        target_end: usize,
    ) -> PyResult<(f64, f64, f64)> {
        if target_start < 1 || target_end < target_start || target_end > tokens.len() {
            return Err(PyValueError::new_err(format!(
                "target span {target_start}..{target_end} outside 1..{}",
                tokens.len()
            )));
        }
        let x = table.inner.embed_sequence(&tokens);
        let span = TargetSpan {
            start: target_start,
            end: target_end,
        };
        let p = self
            .inner
            .model
            .predict_targeted(&x, span)
            .map_err(py_err)?;
        Ok((p.p_neg, p.p_neu, p.p_pos))
    }

    fn predict_passage(
        &self,
        table: &PyEmbeddingTable,
        tokens: Vec<String>,
    ) -> PyResult<(f64, f64, f64)> {
        let x = table.inner.embed_sequence(&tokens);
        let p = self.inner.model.predict_passage(&x).map_err(py_err)?;
        Ok((p.p_neg, p.p_neu, p.p_pos))
    }

    /// All measures on targeted instances, as a dict.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        table: &PyEmbeddingTable,
        data: Vec<PyTargeted>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let data = Dataset::Targeted(targeted(data)?);
        let report =
            evaluation::evaluate(&self.inner.model, &data, &table.inner, Estimate::Discrete)
                .map_err(py_err)?;
        let json =
            serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        py.import("json")?.call_method1("loads", (json,))
    }

    /// Occlusion records `(position, token, drop_pos, drop_neg)` for context tokens.
    fn occlusion(
        &self,
        table: &PyEmbeddingTable,
        instance: PyTargeted,
    ) -> PyResult<Vec<(usize, String, f64, f64)>> {
        let inst = instance.into_instance()?;
        let records = occlusion_scores(&self.inner.model, &inst, &table.inner).map_err(py_err)?;
        Ok(records
            .into_iter()
            .map(|r| (r.position, r.token, r.drop_pos, r.drop_neg))
            .collect())
    }

    #[pyo3(signature = (table, instance, format="html"))]
    fn heatmap(
        &self,
        table: &PyEmbeddingTable,
        instance: PyTargeted,
        format: &str,
    ) -> PyResult<String> {
        let format = match format {
            "html" => HeatmapFormat::Html,
            "ansi" => HeatmapFormat::Ansi,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown heatmap format {other:?}"
                )))
            }
        };
        let inst = instance.into_instance()?;
        let records = occlusion_scores(&self.inner.model, &inst, &table.inner).map_err(py_err)?;
        Ok(render_heatmap(&records, &inst, format))
    }
}

/// Trains one variant. `config` takes the same keys as the CLI config file's training section.
#[pyfunction]
#[pyo3(signature = (variant, table, main=None, aux=None, config=None))]
fn train(
    py: Python<'_>,
    variant: &str,
    table: &PyEmbeddingTable,
    main: Option<Vec<PyTargeted>>,
    aux: Option<Vec<PyPassage>>,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyModel> {
    let variant: Variant = variant.parse().map_err(py_err)?;
    let cfg = train_config(config)?;
    let main = main.map(targeted).transpose()?;
    let aux = aux.map(passages).transpose()?;
    let table = &table.inner;
    let checkpoint = py.detach(|| {
        let data = TrainData {
            table,
            aux: aux.as_deref(),
            main: main.as_deref(),
            validation: None,
        };
        training::train_variant(variant, &data, &cfg)
    });
    Ok(PyModel {
        inner: checkpoint.map_err(py_err)?,
    })
}

fn pairs(gold: &[i64], pred: &[i64]) -> PyResult<Vec<EvalPair>> {
    if gold.len() != pred.len() {
        return Err(PyValueError::new_err(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    gold.iter()
        .zip(pred)
        .map(|(g, p)| Ok(EvalPair::hard(label(*g)?, label(*p)?)))
        .collect()
}

#[pyfunction]
fn accuracy(gold: Vec<i64>, pred: Vec<i64>) -> PyResult<f64> {
    evaluation::accuracy(&pairs(&gold, &pred)?).map_err(py_err)
}

#[pyfunction]
fn macro_f1(gold: Vec<i64>, pred: Vec<i64>) -> PyResult<f64> {
    Ok(evaluation::macro_prf(&pairs(&gold, &pred)?)
        .map_err(py_err)?
        .f1)
}

#[pyfunction]
fn mae(gold: Vec<i64>, pred: Vec<i64>) -> PyResult<f64> {
    evaluation::mae(&pairs(&gold, &pred)?, Estimate::Discrete).map_err(py_err)
}

#[pyfunction]
fn pir(gold: Vec<i64>, pred: Vec<i64>) -> PyResult<f64> {
    evaluation::pir(&pairs(&gold, &pred)?, Estimate::Discrete).map_err(py_err)
}

/// Largest relative error between analytic and central-difference gradients.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<f64> {
    let profile = GradcheckProfile {
        seed,
        ..Default::default()
    };
    Ok(run_gradcheck(&profile)
        .map_err(py_err)?
        .max_relative_error())
}

#[pymodule]
fn mttdsc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(pir, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<PyEmbeddingTable>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
