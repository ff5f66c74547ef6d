use std::path::Path;

use serde_json::{json, Value};

use super::{ActArg, Cli, Command, EngineArg, FoldArgs, InferArgs, MethodArg, MetricsArgs, QuantEngineArg, QuantizeArgs, RoundingArg, SchemeArgs, TrainArgs};
use crate::engine_log::{forward_reference_log, quantize_log_model, LogConfig, LogEngine, LogQuantModel, StreamOrder, LOGQ_MAGIC};
use crate::engine_lut::{forward_reference_quantized, run_batch, Inference, LutEngine};
use crate::fold::fold_model;
use crate::metrics::{accounting, log_report, lut_report, AccountingParams, ComplexityReport};
use crate::model::{load_float_model, read_f32_blob, save_float_model, write_f32_blob, Activation, FloatModel};
use crate::quantized::{quantize_model, ActMethod, QuantizeConfig, QuantizedModel, ShiftRounding, WeightMethod, LUTQ_MAGIC};
use crate::train::{accuracy, blobs, load_idx, train, two_moons, Dataset, QuantSpec, TrainConfig, TrainNet};
use crate::{Error, Result};

pub(super) struct Output {
    pub json: Value,
    pub summary: String,
}

pub(super) fn dispatch(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Fold(a) => fold(a),
        Command::Quantize(a) => quantize(a),
        Command::Infer(a) => infer(a),
        Command::Metrics(a) => metrics(a),
        Command::TrainToy(a) => train_toy(a),
    }
}

impl SchemeArgs {
    pub fn weight_method(&self) -> WeightMethod {
        match self.method {
            MethodArg::Kmeans => WeightMethod::Kmeans { n_w: self.nw },
            MethodArg::Laplacian => WeightMethod::Laplacian { n_w: self.nw },
            MethodArg::Modelfree => WeightMethod::Modelfree {
                n_w: self.nw,
                center: self.center.into(),
            },
            MethodArg::Octave => WeightMethod::Octave { n_q: self.nq, n_o: self.n_o },
        }
    }

    pub fn act_method(&self) -> ActMethod {
        match self.act_method {
            ActArg::Linear => ActMethod::Linear { n_a: self.na },
            ActArg::Octave => ActMethod::Octave { n_q: self.aq, n_o: self.ao },
        }
    }
}

enum AnyModel {
    Float(FloatModel),
    Lut(QuantizedModel),
    Log(LogQuantModel),
}

fn load_any(path: &Path) -> Result<AnyModel> {
    if path.is_dir() {
        return Ok(AnyModel::Float(load_float_model(path)?));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(..4) {
        Some(m) if m == LUTQ_MAGIC => Ok(AnyModel::Lut(QuantizedModel::from_bytes(&bytes, path)?)),
        Some(m) if m == LOGQ_MAGIC => Ok(AnyModel::Log(LogQuantModel::from_bytes(&bytes, path)?)),
        _ => Err(Error::format(path, "not a float checkpoint directory, LUTQ or LOGQ file")),
    }
}

fn count_norms(m: &FloatModel) -> usize {
    m.layers()
        .iter()
        .map(|l| l.norm.is_some() as usize + l.input_norm.is_some() as usize + l.weight_norm.is_some() as usize)
        .sum()
}

fn fold(a: &FoldArgs) -> Result<Output> {
    let m = load_float_model(&a.model)?;
    let folded = fold_model(&m)?;
    let out = super::output_path(&a.out);
    save_float_model(&folded, &out)?;
    let norms = count_norms(&m);
    Ok(Output {
        json: json!({
            "command": "fold",
            "out": out,
            "layers": folded.layers().len(),
            "norms_folded": norms,
            "parameters": folded.parameter_count(),
        }),
        summary: format!(
            "folded {norms} normalization(s) over {} layers into {}",
            folded.layers().len(),
            out.display()
        ),
    })
}

fn report_summary(r: &ComplexityReport) -> String {
    let mut s = format!(
        "engine {}: NUC {} NWNC {} table entries {} serialized bytes {}",
        r.engine, r.nuc, r.nwnc, r.network_lut_entries, r.serialized_bytes
    );
    for l in &r.layers {
        s.push_str(&format!(
            "\n  layer {}: nuc {} lut {} (+{}) act {} params {} bytes {}",
            l.layer,
            l.nuc,
            l.lut_entries,
            l.extra_lut_entries,
            l.activation_table_entries,
            l.n_params,
            l.bytes.total()
        ));
    }
    s
}

fn quantize(a: &QuantizeArgs) -> Result<Output> {
    let m = load_float_model(&a.model)?;
    let folded = fold_model(&m)?;
    let (default_name, model, report) = match a.engine {
        QuantEngineArg::Lut => {
            let cfg = QuantizeConfig {
                s: a.s,
                dx: a.dx,
                seed: a.scheme.seed,
                subsample: a.subsample,
                rounding: match a.rounding {
                    RoundingArg::Floor => ShiftRounding::Floor,
                    RoundingArg::Nearest => ShiftRounding::Nearest,
                },
                compact_octave: !a.full_octave,
                ..QuantizeConfig::new(a.scheme.weight_method(), a.scheme.act_method())
            };
            let qm = quantize_model(&folded, &cfg)?;
            let r = lut_report(&qm);
            ("model.lutq", Model::Lut(qm), r)
        }
        QuantEngineArg::Log => {
            if a.scheme.method != MethodArg::Octave || a.scheme.act_method != ActArg::Octave {
                return Err(Error::InvalidParam(
                    "--engine log needs --method octave and --act-method octave".into(),
                ));
            }
            let cfg = LogConfig::new(a.scheme.nq, a.scheme.n_o, a.scheme.aq, a.scheme.ao);
            let lm = quantize_log_model(&folded, &cfg)?;
            let r = log_report(&lm);
            ("model.logq", Model::Log(lm), r)
        }
    };
    let out = super::output_path(a.out.as_deref().unwrap_or(Path::new(default_name)));
    match &model {
        Model::Lut(m) => m.save(&out)?,
        Model::Log(m) => m.save(&out)?,
    }
    let file_bytes = std::fs::metadata(&out).map_err(|e| Error::io(&out, e))?.len();
    let summary = format!("wrote {} ({file_bytes} bytes)\n{}", out.display(), report_summary(&report));
    Ok(Output {
        json: json!({
            "command": "quantize",
            "out": out,
            "file_bytes": file_bytes,
            "report": report,
        }),
        summary,
    })
}

enum Model {
    Lut(QuantizedModel),
    Log(LogQuantModel),
}

fn read_inputs(path: &Path, input_len: usize) -> Result<Vec<Vec<f64>>> {
    let v = read_f32_blob(path)?;
    if input_len == 0 || v.len() % input_len != 0 || v.is_empty() {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected: (v.len() / input_len.max(1)).max(1) * input_len * 4,
            actual: v.len() * 4,
        });
    }
    Ok(v.chunks(input_len).map(|c| c.iter().map(|&x| x as f64).collect()).collect())
}

fn infer(a: &InferArgs) -> Result<Output> {
    let model = load_any(&a.model)?;
    let k = a.topk;
    let t = a.threads;
    let wrong = |want: &str| Error::InvalidParam(format!("--engine {want} needs a {} model file", want.to_uppercase() + "Q"));
    let (input_len, results) = match (a.engine, model) {
        (EngineArg::Float, AnyModel::Float(m)) => {
            let x = read_inputs(&a.inputs, m.input_len())?;
            (m.input_len(), run_batch(&x, t, |x| Ok(Inference::from_logits(Vec::new(), m.forward(x)?, k)))?)
        }
        (EngineArg::Float, AnyModel::Lut(m)) => {
            let x = read_inputs(&a.inputs, m.input_len())?;
            let r = run_batch(&x, t, |x| Ok(Inference::from_logits(Vec::new(), forward_reference_quantized(&m, x)?, k)))?;
            (m.input_len(), r)
        }
        (EngineArg::Float, AnyModel::Log(m)) => {
            let x = read_inputs(&a.inputs, m.input_len())?;
            let r = run_batch(&x, t, |x| Ok(Inference::from_logits(Vec::new(), forward_reference_log(&m, x)?, k)))?;
            (m.input_len(), r)
        }
        (EngineArg::Lut, AnyModel::Lut(m)) => {
            let e = LutEngine::new(m)?;
            let x = read_inputs(&a.inputs, e.input_len())?;
            (e.input_len(), e.infer_batch(&x, k, t)?)
        }
        (EngineArg::Log, AnyModel::Log(m)) => {
            let order = if a.ascending { StreamOrder::AscendingMagnitude } else { StreamOrder::Stored };
            let e = LogEngine::with_order(m, order)?;
            let x = read_inputs(&a.inputs, e.input_len())?;
            (e.input_len(), e.infer_batch(&x, k, t)?)
        }
        (EngineArg::Lut, _) => return Err(wrong("lut")),
        (EngineArg::Log, _) => return Err(wrong("log")),
    };
    let engine = match a.engine {
        EngineArg::Float => "float",
        EngineArg::Lut => "lut",
        EngineArg::Log => "log",
    };
    let mut summary = format!("{engine}: {} input(s)", results.len());
    for (i, r) in results.iter().enumerate().take(20) {
        summary.push_str(&format!("\n  {i}: top-{k} {:?}", r.topk));
    }
    if results.len() > 20 {
        summary.push_str("\n  ...");
    }
    Ok(Output {
        json: json!({
            "command": "infer",
            "engine": engine,
            "model": a.model,
            "input_len": input_len,
            "n_inputs": results.len(),
            "results": results,
        }),
        summary,
    })
}

fn metrics(a: &MetricsArgs) -> Result<Output> {
    if let Some(p) = &a.source.params {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let params: AccountingParams = serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?;
        let mut v = accounting(&params)?;
        let summary = format!("{params:?}: {v}");
        if let Value::Object(o) = &mut v {
            o.insert("command".into(), json!("metrics"));
            o.insert("params".into(), serde_json::to_value(params)?);
        }
        return Ok(Output { json: v, summary });
    }
    let path = a.source.model.as_deref().expect("clap enforces one source");
    let report = match load_any(path)? {
        AnyModel::Lut(m) => lut_report(&m),
        AnyModel::Log(m) => log_report(&m),
        AnyModel::Float(_) => return Err(Error::InvalidParam("metrics needs a quantized model file".into())),
    };
    let mut v = serde_json::to_value(&report)?;
    if let Value::Object(o) = &mut v {
        o.insert("command".into(), json!("metrics"));
    }
    Ok(Output {
        json: v,
        summary: report_summary(&report),
    })
}

fn load_task(a: &TrainArgs) -> Result<Dataset> {
    match a.task.as_str() {
        "moons" => two_moons(a.samples, a.noise, a.scheme.seed),
        "blobs" => blobs(a.samples, a.classes, 2, 1.0, a.scheme.seed),
        t => match t.strip_prefix("idx:").and_then(|p| p.split_once(',')) {
            Some((img, lab)) => load_idx(img, lab),
            None => Err(Error::InvalidParam(format!(
                "--task must be moons, blobs or idx:<images>,<labels>, got '{t}'"
            ))),
        },
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| Error::io(path, e))
}

fn train_toy(a: &TrainArgs) -> Result<Output> {
    let act: Activation = a.act.into();
    let (lo, hi) = act.bounds().expect("hidden activations are bounded");
    let (mut tr, mut va) = load_task(a)?.split(a.val_fraction, a.scheme.seed);
    let ranges = tr.ranges();
    tr.rescale(&ranges, lo, hi);
    va.rescale(&ranges, lo, hi);
    let mut widths = vec![tr.n_features()];
    widths.extend(&a.hidden);
    widths.push(tr.n_classes);
    let net = TrainNet::mlp(&widths, act, a.scheme.seed)?;
    let weights = a.scheme.weight_method();
    let acts = a.scheme.act_method();
    let base = TrainConfig {
        epochs: a.epochs,
        float_epochs: a.float_epochs,
        batch_size: a.batch,
        lr: a.lr,
        momentum: a.momentum,
        seed: a.scheme.seed,
        quant: None,
    };
    let float_run = train(net.clone(), &tr, &va, &base)?;
    let quant_cfg = TrainConfig {
        quant: Some(QuantSpec {
            weights,
            activations: Some(acts),
            period: a.period,
            requantize: true,
            quantize_input: true,
        }),
        ..base
    };
    let quant_run = train(net, &tr, &va, &quant_cfg)?;

    let out = super::output_path(&a.out);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let float_model = float_run.net.to_model()?;
    let quant_model = quant_run.net.to_model()?;
    save_float_model(&float_model, out.join("float"))?;
    save_float_model(&quant_model, out.join("quantized"))?;
    float_run.write_csv(out.join("float_log.csv"))?;
    quant_run.write_csv(out.join("quantized_log.csv"))?;
    let qcfg = QuantizeConfig {
        seed: a.scheme.seed,
        ..QuantizeConfig::new(weights, acts)
    };
    let qm = quantize_model(&quant_model, &qcfg)?;
    qm.save(out.join("model.lutq"))?;
    let val_x: Vec<f32> = va.x.iter().flatten().map(|&v| v as f32).collect();
    write_f32_blob(out.join("val_inputs.f32"), &val_x)?;
    write_json(&out.join("val_labels.json"), &json!(va.y))?;

    let engine = LutEngine::new(qm)?;
    let lut_pred = engine.infer_batch(&va.x, 1, None)?;
    let lut_acc = lut_pred.iter().zip(&va.y).filter(|(r, &y)| r.argmax() == Some(y)).count() as f64 / va.len().max(1) as f64;
    let float_acc = accuracy(&float_run.net, &va, None);
    let quant_acc = quant_run.accuracy(&va);
    let max_distinct = quant_run.events.iter().map(|e| e.distinct_params).max().unwrap_or(0);
    let n_w = quant_run.events.first().map_or(0, |e| e.n_w);
    let summary_json = json!({
        "command": "train-toy",
        "task": a.task,
        "widths": widths,
        "train_samples": tr.len(),
        "val_samples": va.len(),
        "input_ranges": ranges,
        "input_target": [lo, hi],
        "float": {"val_acc": float_acc, "steps": float_run.steps},
        "quantized": {
            "val_acc": quant_acc,
            "lut_val_acc": lut_acc,
            "steps": quant_run.steps,
            "events": quant_run.events.len(),
            "max_distinct_params": max_distinct,
            "n_w": n_w,
        },
        "out": out,
    });
    write_json(&out.join("summary.json"), &summary_json)?;
    Ok(Output {
        summary: format!(
            "float val acc {:.4}, quantized val acc {:.4} (LUT engine {:.4}), {} requantize events, <= {} distinct of N_w {}\nwrote {}",
            float_acc,
            quant_acc,
            lut_acc,
            quant_run.events.len(),
            max_distinct,
            n_w,
            out.display()
        ),
        json: summary_json,
    })
}
