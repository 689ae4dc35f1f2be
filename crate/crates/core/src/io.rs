//! Model and dataset file formats.
//!
//! Models are JSON documents. A chain model carries a `layers` array; a DAG
//! model carries `edges` (with 1-based node indices) plus per-node `biases`.
//! Datasets are headerless CSV: integer label first, features after.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Activation, DagEdge, DagNetwork, DataPoint, Dataset, Layer, Model, Network};

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    from: usize,
    to: usize,
    weight: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    activation: String,
    sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layers: Option<Vec<LayerDoc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<EdgeDoc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    biases: Option<Vec<Vec<f64>>>,
}

/// Parses a model document.
pub fn model_from_json(text: &str) -> Result<Model> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    if doc.version != 1 {
        return Err(Error::InvalidModel(format!("unsupported version {}", doc.version)));
    }
    let activation = Activation::parse(&doc.activation)?;
    if doc.sizes.len() < 2 {
        return Err(Error::InvalidModel("sizes must list at least two levels".into()));
    }
    match (doc.layers, doc.edges) {
        (Some(layers), None) => {
            if doc.biases.is_some() {
                return Err(Error::InvalidModel("chain models take biases inside layers".into()));
            }
            if layers.len() != doc.sizes.len() - 1 {
                return Err(Error::InvalidModel(format!(
                    "{} layers for {} sizes",
                    layers.len(),
                    doc.sizes.len()
                )));
            }
            let mut built = Vec::with_capacity(layers.len());
            for (i, l) in layers.into_iter().enumerate() {
                let weight = Matrix::from_rows(&l.weight)?;
                if weight.rows() != doc.sizes[i + 1] || weight.cols() != doc.sizes[i] {
                    return Err(Error::InvalidModel(format!(
                        "layer {} weight is {}x{}, sizes say {}x{}",
                        i,
                        weight.rows(),
                        weight.cols(),
                        doc.sizes[i + 1],
                        doc.sizes[i]
                    )));
                }
                built.push(Layer { weight, bias: l.bias });
            }
            Ok(Model::Chain(Network::new(built, activation)?))
        }
        (None, Some(edges)) => {
            let biases = doc
                .biases
                .ok_or_else(|| Error::InvalidModel("DAG models need a biases list".into()))?;
            let mut built = Vec::with_capacity(edges.len());
            for e in edges {
                built.push(DagEdge { from: e.from, to: e.to, weight: Matrix::from_rows(&e.weight)? });
            }
            Ok(Model::Dag(DagNetwork::new(doc.sizes, built, biases, activation)?))
        }
        (Some(_), Some(_)) => {
            Err(Error::InvalidModel("model carries both layers and edges".into()))
        }
        (None, None) => Err(Error::InvalidModel("model carries neither layers nor edges".into())),
    }
}

/// Serializes a model. Numbers round-trip exactly.
pub fn model_to_json(model: &Model) -> String {
    let doc = match model {
        Model::Chain(net) => ModelDoc {
            version: 1,
            activation: net.activation().name().to_string(),
            sizes: net.sizes().to_vec(),
            layers: Some(
                net.layers()
                    .iter()
                    .map(|l| LayerDoc { weight: l.weight.to_rows(), bias: l.bias.clone() })
                    .collect(),
            ),
            edges: None,
            biases: None,
        },
        Model::Dag(dag) => ModelDoc {
            version: 1,
            activation: dag.activation().name().to_string(),
            sizes: dag.sizes().to_vec(),
            layers: None,
            edges: Some(
                dag.edges()
                    .iter()
                    .map(|e| EdgeDoc { from: e.from, to: e.to, weight: e.weight.to_rows() })
                    .collect(),
            ),
            biases: Some(dag.biases().to_vec()),
        },
    };
    serde_json::to_string_pretty(&doc).expect("model serialization cannot fail")
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(model))?;
    Ok(())
}

/// Parses a dataset from CSV text: `label,feat1,feat2,...` per line.
pub fn dataset_from_csv(text: &str, has_header: bool) -> Result<Dataset> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if has_header && lineno == 0 {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label: usize = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad label", lineno + 1)))?;
        let features = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad feature {f:?}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.is_empty() {
            return Err(Error::Parse(format!("line {}: no features", lineno + 1)));
        }
        points.push(DataPoint { features, label });
    }
    Dataset::new(points)
}

pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for p in &ds.points {
        out.push_str(&p.label.to_string());
        for f in &p.features {
            out.push(',');
            out.push_str(&f.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn load_dataset(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    dataset_from_csv(&std::fs::read_to_string(path)?, has_header)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_csv(ds))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_chain_document() {
        let text = r#"{"version":1,"activation":"relu","sizes":[1,1],
                       "layers":[{"weight":[[2.0]],"bias":[1.0]}]}"#;
        let model = model_from_json(text).unwrap();
        match &model {
            Model::Chain(net) => assert_eq!(net.depth(), 2),
            Model::Dag(_) => panic!("expected chain"),
        }
        assert_eq!(model.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn edges_document_builds_dag() {
        let text = r#"{"version":1,"activation":"relu","sizes":[1,1],
                       "edges":[{"from":1,"to":2,"weight":[[2.0]]}],
                       "biases":[[1.0]]}"#;
        match model_from_json(text).unwrap() {
            Model::Dag(d) => assert_eq!(d.depth(), 2),
            Model::Chain(_) => panic!("expected DAG"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        // weight row length disagrees with declared input size
        let text = r#"{"version":1,"activation":"relu","sizes":[2,1],
                       "layers":[{"weight":[[2.0]],"bias":[1.0]}]}"#;
        assert!(model_from_json(text).is_err());
    }

    #[test]
    fn unknown_activation_is_rejected() {
        let text = r#"{"version":1,"activation":"gelu","sizes":[1,1],
                       "layers":[{"weight":[[1.0]],"bias":[0.0]}]}"#;
        assert!(model_from_json(text).is_err());
    }

    #[test]
    fn dataset_roundtrip_and_header() {
        let text = "label,f0,f1\n1,0.5,-0.25\n0,0.125,1\n";
        let ds = dataset_from_csv(text, true).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.points[0].features, vec![0.5, -0.25]);
        let again = dataset_from_csv(&dataset_to_csv(&ds), false).unwrap();
        assert_eq!(ds, again);
    }

    proptest! {
        #[test]
        fn model_roundtrip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let net = Network::new(
                vec![
                    Layer {
                        weight: Matrix::from_rows(&[vec![values[0], values[1]]]).unwrap(),
                        bias: vec![values[2]],
                    },
                    Layer {
                        weight: Matrix::from_rows(&[vec![values[3]], vec![values[4]]]).unwrap(),
                        bias: vec![values[5], 0.1 + values[5] / 3.0],
                    },
                ],
                Activation::Tanh,
            )
            .unwrap();
            let model = Model::Chain(net);
            let text = model_to_json(&model);
            let back = model_from_json(&text).unwrap();
            // bit-exact round trip, not just approximate
            prop_assert_eq!(model, back);
        }

        #[test]
        fn dag_roundtrip_is_exact(w in -1e3f64..1e3, skip in -1e3f64..1e3) {
            let dag = DagNetwork::new(
                vec![1, 2, 1],
                vec![
                    DagEdge { from: 1, to: 2, weight: Matrix::from_rows(&[vec![w], vec![-w]]).unwrap() },
                    DagEdge { from: 2, to: 3, weight: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap() },
                    DagEdge { from: 1, to: 3, weight: Matrix::from_rows(&[vec![skip]]).unwrap() },
                ],
                vec![vec![0.25, -0.5], vec![w / 7.0]],
                Activation::Sigmoid,
            )
            .unwrap();
            let model = Model::Dag(dag);
            let back = model_from_json(&model_to_json(&model)).unwrap();
            prop_assert_eq!(model, back);
        }
    }
}
