//! Model persistence: TOML header plus a binary blob holding the weights,
//! the means and either the full covariances or the Kronecker factors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Covariances, GmmModel};
use crate::error::{Error, Result};
use crate::io::{read_header, write_header, BlobReader, BlobWriter};
use crate::linalg::CVec;

const FORMAT: &str = "gmmfb-gmm";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    structure: String,
    k: usize,
    n: usize,
    rows: usize,
    cols: usize,
    k_tx: usize,
    k_rx: usize,
}

pub fn write_model(model: &GmmModel, path: &Path) -> Result<()> {
    let (rows, cols) = model.shape();
    let (structure, k_tx, k_rx) = match model.covariances() {
        Covariances::Full(_) => ("full", 0, 0),
        Covariances::Kronecker { k_tx, k_rx, .. } => ("kronecker", *k_tx, *k_rx),
    };
    let header = ModelHeader {
        format: FORMAT.into(),
        version: VERSION,
        structure: structure.into(),
        k: model.n_components(),
        n: model.dim(),
        rows,
        cols,
        k_tx,
        k_rx,
    };
    let mut blob = BlobWriter::create(path)?;
    for &w in model.weights() {
        blob.real(w)?;
    }
    for m in model.means() {
        for &z in m.iter() {
            blob.complex(z)?;
        }
    }
    match model.covariances() {
        Covariances::Full(cs) => {
            for c in cs {
                blob.matrix(c)?;
            }
        }
        Covariances::Kronecker { tx, rx, .. } => {
            for c in tx.iter().chain(rx) {
                blob.matrix(c)?;
            }
        }
    }
    blob.finish()?;
    write_header(path, &header)
}

pub fn read_model(path: &Path) -> Result<GmmModel> {
    let h: ModelHeader = read_header(path)?;
    if h.format != FORMAT || h.version != VERSION {
        return Err(Error::Format(format!("not a {FORMAT} v{VERSION} file")));
    }
    if h.rows * h.cols != h.n || h.k == 0 {
        return Err(Error::Format("inconsistent model dimensions".into()));
    }
    let mut blob = BlobReader::open(path)?;
    let weights = (0..h.k).map(|_| blob.real()).collect::<Result<Vec<_>>>()?;
    let mut means = Vec::with_capacity(h.k);
    for _ in 0..h.k {
        let v = (0..h.n).map(|_| blob.complex()).collect::<Result<Vec<_>>>()?;
        means.push(CVec::from_vec(v));
    }
    let model = match h.structure.as_str() {
        "full" => {
            let covs = (0..h.k).map(|_| blob.matrix(h.n, h.n)).collect::<Result<Vec<_>>>()?;
            blob.expect_end()?;
            GmmModel::full(weights, means, covs, (h.rows, h.cols))?
        }
        "kronecker" => {
            if h.k_tx * h.k_rx != h.k {
                return Err(Error::Format("k differs from k_tx·k_rx".into()));
            }
            let tx = (0..h.k_tx).map(|_| blob.matrix(h.cols, h.cols)).collect::<Result<Vec<_>>>()?;
            let rx = (0..h.k_rx).map(|_| blob.matrix(h.rows, h.rows)).collect::<Result<Vec<_>>>()?;
            blob.expect_end()?;
            GmmModel::kronecker(weights, means, tx, rx, (h.rows, h.cols))?
        }
        other => return Err(Error::Format(format!("unknown covariance structure `{other}`"))),
    };
    Ok(model)
}
