//! The end-to-end stages behind the command-line tool. Each stage reads its
//! inputs from the run layout, writes its artifacts plus the resolved config,
//! and is reproducible given the config.

mod ablate;
mod preview;

use std::path::{Path, PathBuf};

pub use ablate::{ablate, AblationRun, AblationTable, Variant, ABLATION_CSV_HEADER};
pub use preview::{emit_preview, encode_preview};

use crate::autodiff::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{read_scan_dir, Scan};
use crate::error::{Error, Result};
use crate::geom;
use crate::metrics::{evaluate, MetricReport};
use crate::rng::{indexed, stream};
use crate::synth::{generate_dataset, Manifest};
use crate::transformer::{
    flatten, read_token_set, tokens_to_grid, train_transformer, write_token_set, Transformer,
};
use crate::vqvae::{train_vqvae, VqTrainLog, VqVae};

/// Where each stage reads and writes.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub train: PathBuf,
    pub test: PathBuf,
    pub vqvae: PathBuf,
    pub tokens: PathBuf,
    pub transformer: PathBuf,
    pub samples: PathBuf,
    pub eval: PathBuf,
    pub ablate: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        let (d, r) = (&cfg.paths.data_dir, &cfg.paths.run_dir);
        Self {
            train: d.join("train"),
            test: d.join("test"),
            vqvae: r.join("vqvae"),
            tokens: r.join("tokens"),
            transformer: r.join("transformer"),
            samples: r.join("samples"),
            eval: r.join("eval"),
            ablate: r.join("ablate"),
        }
    }

    pub fn vqvae_checkpoint(&self) -> PathBuf {
        self.vqvae.join("vqvae.ckpt")
    }

    pub fn transformer_checkpoint(&self) -> PathBuf {
        self.transformer.join("transformer.ckpt")
    }
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} is missing; run `{hint}` first", path.display())))
    }
}

/// Writes the train split (indices `0..train`) and the held-out test split.
pub fn synth_data(cfg: &RunConfig) -> Result<(Manifest, Manifest)> {
    let l = Layout::new(cfg);
    let s = &cfg.synth;
    let train = generate_dataset(&s.scene, &cfg.projection, 0, s.train, &l.train)?;
    let test = generate_dataset(&s.scene, &cfg.projection, s.train as u64, s.test, &l.test)?;
    cfg.echo(&cfg.paths.data_dir)?;
    Ok((train, test))
}

/// Projects every KITTI-style `.bin` cloud in `input` into grid pairs in `output`.
pub fn project_dir(cfg: &RunConfig, input: &Path, output: &Path) -> Result<usize> {
    let mut clouds: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    clouds.sort();
    if clouds.is_empty() {
        return Err(Error::invalid(format!("no .bin clouds in {}", input.display())));
    }
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    for path in &clouds {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scan");
        Scan::from_cloud(&geom::read_kitti_bin(path)?, &cfg.projection)?.write(output, stem)?;
    }
    cfg.echo(output)?;
    Ok(clouds.len())
}

/// A freshly initialized autoencoder for the configured input size.
pub fn build_vqvae(cfg: &RunConfig, seed: u64) -> Result<VqVae<f32>> {
    let mut rng = indexed(seed, stream::INIT, 0);
    VqVae::new(cfg.vqvae.clone(), cfg.projection.height, cfg.projection.width, &mut rng)
}

pub fn load_vqvae(cfg: &RunConfig) -> Result<VqVae<f32>> {
    let path = Layout::new(cfg).vqvae_checkpoint();
    require(&path, "train-vqvae")?;
    let mut model = build_vqvae(cfg, cfg.seed)?;
    checkpoint::load_into(model.params_mut(), &path)?;
    Ok(model)
}

pub fn build_transformer(cfg: &RunConfig, seed: u64) -> Result<Transformer<f32>> {
    let (h, w) = cfg.vqvae.latent_shape(cfg.projection.height, cfg.projection.width)?;
    let mut rng = indexed(seed, stream::INIT, 1);
    Transformer::new(cfg.transformer.clone(), cfg.vqvae.codebook_size, h * w, &mut rng)
}

pub fn load_transformer(cfg: &RunConfig) -> Result<Transformer<f32>> {
    let path = Layout::new(cfg).transformer_checkpoint();
    require(&path, "train-transformer")?;
    let mut model = build_transformer(cfg, cfg.seed)?;
    checkpoint::load_into(model.params_mut(), &path)?;
    Ok(model)
}

fn load_split(dir: &Path, cfg: &RunConfig) -> Result<Vec<Scan>> {
    require(dir, "synth-data")?;
    read_scan_dir(dir, &cfg.projection)
}

pub fn train_vqvae_stage(cfg: &RunConfig) -> Result<VqTrainLog> {
    let l = Layout::new(cfg);
    let data = load_split(&l.train, cfg)?;
    let mut model = build_vqvae(cfg, cfg.seed)?;
    cfg.echo(&l.vqvae)?;
    train_vqvae(&mut model, &data, &cfg.training.vqvae, &cfg.codebook, cfg.seed, Some(&l.vqvae))
}

/// Encodes both splits with the trained autoencoder; returns the token counts.
pub fn extract_tokens(cfg: &RunConfig) -> Result<(usize, usize)> {
    let l = Layout::new(cfg);
    let model = load_vqvae(cfg)?;
    std::fs::create_dir_all(&l.tokens).map_err(|e| Error::io(&l.tokens, e))?;
    let mut counts = [0; 2];
    for (i, (dir, name)) in [(&l.train, "train.tok"), (&l.test, "test.tok")].into_iter().enumerate() {
        let grids = model.encode_tokens(&load_split(dir, cfg)?)?;
        write_token_set(&grids, &l.tokens.join(name))?;
        counts[i] = grids.len();
    }
    cfg.echo(&l.tokens)?;
    Ok((counts[0], counts[1]))
}

pub fn train_transformer_stage(cfg: &RunConfig) -> Result<Vec<(usize, f64)>> {
    let l = Layout::new(cfg);
    let path = l.tokens.join("train.tok");
    require(&path, "extract-tokens")?;
    let grids = read_token_set(&path)?;
    let mut model = build_transformer(cfg, cfg.seed)?;
    for g in &grids {
        g.check_vocab(cfg.vqvae.codebook_size)?;
    }
    let seqs: Vec<Vec<u16>> = grids.iter().map(flatten).collect();
    cfg.echo(&l.transformer)?;
    train_transformer(&mut model, &seqs, &cfg.training.transformer, cfg.seed, Some(&l.transformer))
}

/// Draws `sample.count` token grids, decodes and composes them, and writes
/// grids, unprojected clouds and previews to the samples directory.
pub fn sample(cfg: &RunConfig, seed: Option<u64>) -> Result<Vec<Scan>> {
    let l = Layout::new(cfg);
    let vq = load_vqvae(cfg)?;
    let ar = load_transformer(cfg)?;
    let seed = seed.unwrap_or(cfg.seed);
    let (h, w) = vq.latent_shape();
    let seqs = ar.sample_batch(&cfg.transformer.sampling, seed, 0, cfg.sample.count)?;
    let grids = seqs.iter().map(|s| tokens_to_grid(s, h, w, None)).collect::<Result<Vec<_>>>()?;
    let scans = vq
        .decode_tokens(&grids)?
        .iter()
        .map(|d| d.to_scan(&cfg.projection, cfg.vqvae.baseline_threshold))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&l.samples).map_err(|e| Error::io(&l.samples, e))?;
    write_token_set(&grids, &l.samples.join("samples.tok"))?;
    for (i, s) in scans.iter().enumerate() {
        let stem = format!("sample_{i:05}");
        s.write(&l.samples, &stem)?;
        geom::write_kitti_bin(&s.to_cloud()?, &l.samples.join(format!("{stem}.bin")))?;
        emit_preview(&s.range, &s.mask, &l.samples.join(format!("{stem}.pgm")))?;
    }
    cfg.echo(&l.samples)?;
    Ok(scans)
}

/// Metric report of the scans in `gen_dir` against those in `real_dir`.
pub fn evaluate_dirs(cfg: &RunConfig, gen_dir: &Path, real_dir: &Path, out_dir: &Path) -> Result<MetricReport> {
    let gen = read_scan_dir(gen_dir, &cfg.projection)?;
    let real = read_scan_dir(real_dir, &cfg.projection)?;
    let report = evaluate(&gen, &real, &cfg.metrics)?;
    report.write(out_dir)?;
    cfg.echo(out_dir)?;
    Ok(report)
}
