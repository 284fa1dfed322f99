//! Flat `key = value` configuration files.
//!
//! `#` starts a comment; blank lines are ignored; every key is optional and
//! unknown keys are rejected.

use std::path::Path;
use std::str::FromStr;

use crate::aggregation::{DynamicMode, Strategy};
use crate::error::{Error, Result};
use crate::federation::{DataRegime, FederationConfig, Weighting};
use crate::prompt_model::{DiversityForm, InferenceStrategy};
use crate::selection::{PairingMode, SelectionPolicy};

pub fn parse_strategy(s: &str) -> Option<Strategy> {
    match s {
        "full" => Some(Strategy::Full),
        "fixed" => Some(Strategy::Fixed),
        "dynamic" => Some(Strategy::Dynamic),
        _ => None,
    }
}

pub fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Full => "full",
        Strategy::Fixed => "fixed",
        Strategy::Dynamic => "dynamic",
    }
}

fn policy_name(p: SelectionPolicy) -> &'static str {
    match p {
        SelectionPolicy::Probabilistic => "probabilistic",
        SelectionPolicy::TopS => "top_s",
        SelectionPolicy::Random => "random",
        SelectionPolicy::All => "all",
        SelectionPolicy::Prefix => "prefix",
    }
}

fn parse_policy(s: &str) -> Option<SelectionPolicy> {
    [
        SelectionPolicy::Probabilistic,
        SelectionPolicy::TopS,
        SelectionPolicy::Random,
        SelectionPolicy::All,
        SelectionPolicy::Prefix,
    ]
    .into_iter()
    .find(|p| policy_name(*p) == s)
}

fn mode_name(m: DynamicMode) -> &'static str {
    match m {
        DynamicMode::Ordinal => "ordinal",
        DynamicMode::SlotwiseLiteral => "slotwise_literal",
        DynamicMode::SlotwiseRenormalized => "slotwise_renormalized",
    }
}

fn parse_mode(s: &str) -> Option<DynamicMode> {
    [DynamicMode::Ordinal, DynamicMode::SlotwiseLiteral, DynamicMode::SlotwiseRenormalized]
        .into_iter()
        .find(|m| mode_name(*m) == s)
}

fn inference_name(i: InferenceStrategy) -> String {
    match i {
        InferenceStrategy::AverageProbs => "average_probs".into(),
        InferenceStrategy::MaxLogits => "max_logits".into(),
        InferenceStrategy::FeatureAvg => "feature_avg".into(),
        InferenceStrategy::SingleGroup(j) => format!("single_group({j})"),
    }
}

fn parse_inference(s: &str) -> Option<InferenceStrategy> {
    match s {
        "average_probs" => Some(InferenceStrategy::AverageProbs),
        "max_logits" => Some(InferenceStrategy::MaxLogits),
        "feature_avg" => Some(InferenceStrategy::FeatureAvg),
        _ => s
            .strip_prefix("single_group(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|j| j.trim().parse().ok())
            .map(InferenceStrategy::SingleGroup),
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::ConfigParse {
        line,
        message: format!("invalid value `{v}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::ConfigParse {
            line,
            message: format!("`{key}` expects true or false, got `{v}`"),
        }),
    }
}

fn choice<T>(line: usize, key: &str, v: &str, parsed: Option<T>) -> Result<T> {
    parsed.ok_or_else(|| Error::ConfigParse {
        line,
        message: format!("unrecognized value `{v}` for `{key}`"),
    })
}

/// Parses config text; missing keys keep their defaults.
pub fn parse_config_str(text: &str) -> Result<FederationConfig> {
    let mut cfg = FederationConfig::default();
    let mut seen: Vec<String> = Vec::new();
    let mut diversity = "cos".to_string();
    let mut diversity_literal = false;
    let mut regime = "pathological".to_string();
    let mut alpha = 0.5;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, v) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line,
                message: "missing key".into(),
            });
        }
        if seen.iter().any(|k| k == key) {
            return Err(Error::ConfigParse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        seen.push(key.to_string());
        match key {
            "n_clients" => cfg.n_clients = parse_value(line, key, v)?,
            "participation" => cfg.participation = parse_value(line, key, v)?,
            "rounds" => cfg.rounds = parse_value(line, key, v)?,
            "local_epochs" => cfg.local_epochs = parse_value(line, key, v)?,
            "groups" => cfg.groups = parse_value(line, key, v)?,
            "select_s" => cfg.select_s = parse_value(line, key, v)?,
            "tau_sel" => cfg.tau_sel = parse_value(line, key, v)?,
            "lambda" => cfg.lambda = parse_value(line, key, v)?,
            "lr" => cfg.lr = parse_value(line, key, v)?,
            "batch_size" => cfg.batch_size = parse_value(line, key, v)?,
            "strategy" => cfg.strategy = choice(line, key, v, parse_strategy(v))?,
            "policy" => cfg.policy = choice(line, key, v, parse_policy(v))?,
            "pairing" => {
                cfg.pairing_mode = match v {
                    "set_sum" => PairingMode::SetSum,
                    "slotwise" => PairingMode::Slotwise,
                    _ => choice(line, key, v, None)?,
                }
            }
            "aggregation" => cfg.aggregation_mode = choice(line, key, v, parse_mode(v))?,
            "diversity" => {
                let lower = v.to_ascii_lowercase();
                choice(line, key, v, ["cos", "l1", "l2"].contains(&lower.as_str()).then_some(()))?;
                diversity = lower;
            }
            "diversity_literal" => diversity_literal = parse_bool(line, key, v)?,
            "coupled" => cfg.coupled = parse_bool(line, key, v)?,
            "inference" => cfg.inference = choice(line, key, v, parse_inference(v))?,
            "weighting" => {
                cfg.weighting = match v {
                    "equal" => Weighting::Equal,
                    "samples" => Weighting::Samples,
                    _ => choice(line, key, v, None)?,
                }
            }
            "seed" => cfg.seed = parse_value(line, key, v)?,
            "regime" => {
                choice(line, key, v, ["pathological", "dirichlet"].contains(&v).then_some(()))?;
                regime = v.to_string();
            }
            "dirichlet_alpha" => alpha = parse_value(line, key, v)?,
            "n_classes" => cfg.n_classes = parse_value(line, key, v)?,
            "n_noise" => cfg.n_noise = parse_value(line, key, v)?,
            "mixing_rho" => cfg.mixing_rho = parse_value(line, key, v)?,
            "input_dim" => cfg.input_dim = parse_value(line, key, v)?,
            "feature_dim" => cfg.feature_dim = parse_value(line, key, v)?,
            "text_prompt_dim" => cfg.text_prompt_dim = parse_value(line, key, v)?,
            "visual_prompt_dim" => cfg.visual_prompt_dim = parse_value(line, key, v)?,
            "model_temperature" => cfg.model_temperature = parse_value(line, key, v)?,
            "inject_scale" => cfg.inject_scale = parse_value(line, key, v)?,
            "embed_bias" => cfg.embed_bias = parse_value(line, key, v)?,
            "signal_scale" => cfg.signal_scale = parse_value(line, key, v)?,
            "client_shift" => cfg.client_shift = parse_value(line, key, v)?,
            "noise_sigma" => cfg.noise_sigma = parse_value(line, key, v)?,
            "train_per_class" => cfg.train_per_class = parse_value(line, key, v)?,
            "eval_per_class" => cfg.eval_per_class = parse_value(line, key, v)?,
            "init_std" => cfg.init_std = parse_value(line, key, v)?,
            _ => {
                return Err(Error::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
    }
    cfg.diversity = match (diversity.as_str(), diversity_literal) {
        ("cos", true) => DiversityForm::CosLiteral,
        ("cos", false) => DiversityForm::Cos,
        ("l1", false) => DiversityForm::L1,
        ("l2", false) => DiversityForm::L2,
        _ => return Err(Error::Validation("diversity_literal applies to the cos form only".into())),
    };
    cfg.regime = match regime.as_str() {
        "dirichlet" => DataRegime::Dirichlet { alpha },
        _ => DataRegime::Pathological,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<FederationConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

/// Renders every field in the parser's format; parsing the result gives
/// back the same config.
pub fn render_config(cfg: &FederationConfig) -> String {
    let (diversity, literal) = match cfg.diversity {
        DiversityForm::Cos => ("cos", false),
        DiversityForm::CosLiteral => ("cos", true),
        DiversityForm::L1 => ("l1", false),
        DiversityForm::L2 => ("l2", false),
    };
    let (regime, alpha) = match cfg.regime {
        DataRegime::Pathological => ("pathological", None),
        DataRegime::Dirichlet { alpha } => ("dirichlet", Some(alpha)),
    };
    // floats use the shortest round-trip form so the echo reparses exactly
    let mut lines = vec![
        format!("n_clients = {}", cfg.n_clients),
        format!("participation = {:?}", cfg.participation),
        format!("rounds = {}", cfg.rounds),
        format!("local_epochs = {}", cfg.local_epochs),
        format!("groups = {}", cfg.groups),
        format!("select_s = {}", cfg.select_s),
        format!("tau_sel = {:?}", cfg.tau_sel),
        format!("lambda = {:?}", cfg.lambda),
        format!("lr = {:?}", cfg.lr),
        format!("batch_size = {}", cfg.batch_size),
        format!("strategy = {}", strategy_name(cfg.strategy)),
        format!("policy = {}", policy_name(cfg.policy)),
        format!(
            "pairing = {}",
            match cfg.pairing_mode {
                PairingMode::SetSum => "set_sum",
                PairingMode::Slotwise => "slotwise",
            }
        ),
        format!("aggregation = {}", mode_name(cfg.aggregation_mode)),
        format!("diversity = {diversity}"),
        format!("diversity_literal = {literal}"),
        format!("coupled = {}", cfg.coupled),
        format!("inference = {}", inference_name(cfg.inference)),
        format!(
            "weighting = {}",
            match cfg.weighting {
                Weighting::Equal => "equal",
                Weighting::Samples => "samples",
            }
        ),
        format!("seed = {}", cfg.seed),
        format!("regime = {regime}"),
    ];
    if let Some(a) = alpha {
        lines.push(format!("dirichlet_alpha = {a:?}"));
    }
    lines.extend([
        format!("n_classes = {}", cfg.n_classes),
        format!("n_noise = {}", cfg.n_noise),
        format!("mixing_rho = {:?}", cfg.mixing_rho),
        format!("input_dim = {}", cfg.input_dim),
        format!("feature_dim = {}", cfg.feature_dim),
        format!("text_prompt_dim = {}", cfg.text_prompt_dim),
        format!("visual_prompt_dim = {}", cfg.visual_prompt_dim),
        format!("model_temperature = {:?}", cfg.model_temperature),
        format!("inject_scale = {:?}", cfg.inject_scale),
        format!("embed_bias = {:?}", cfg.embed_bias),
        format!("signal_scale = {:?}", cfg.signal_scale),
        format!("client_shift = {:?}", cfg.client_shift),
        format!("noise_sigma = {:?}", cfg.noise_sigma),
        format!("train_per_class = {}", cfg.train_per_class),
        format!("eval_per_class = {}", cfg.eval_per_class),
        format!("init_std = {:?}", cfg.init_std),
    ]);
    lines.join("\n") + "\n"
}
