//! Command-line surface. `main.rs` only parses arguments and maps errors to
//! exit codes; every subcommand lives here.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::attention::{influence_heatmap, simulate_masked_pass, HeadAgg};
use crate::cluster::{kmeans_2d, kmeans_embedding, overlap_report, project_2d};
use crate::error::{Error, Result};
use crate::manifest::{load_run, Run, RunManifest};
use crate::select::{
    build_mask, importance_band_selection, rank_by_score, select_tokens, Band, Budget,
    SimilaritySelection,
};
use crate::synth::{self, SceneConfig};
use crate::tensor_file::{write_tensor, Tensor};

pub const DEFAULT_IGNORE_LIST: &str = "72,124,144,216,288,360,432,504,576";

#[derive(Debug, Parser)]
#[command(
    name = "simignore",
    version,
    about = "Similarity-driven image-token selection toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score image tokens against the prompt and mark the kept ones.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        budget: BudgetOverride,
    },
    /// Write the attention mask as a 1-D tensor of 0.0 / 1.0.
    Mask {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        budget: BudgetOverride,
    },
    /// Influence heat map of one query row over the image grid.
    Heatmap {
        #[command(flatten)]
        common: Common,
        /// Query row: `last` or a 0-based index.
        #[arg(long, default_value = "last")]
        query: QuerySel,
        /// `mean`, `max` or a head index.
        #[arg(long, default_value = "mean")]
        head_agg: HeadAgg,
    },
    /// PCA scatter with k-means labels and the ignored-token overlay.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Defaults to the manifest seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Space::Plane)]
        space: Space,
    },
    /// Ignore a band of tokens ranked by importance.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        band: Band,
        #[arg(long)]
        ignore: usize,
        /// Seed for the random band; defaults to the manifest seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Kept sets, mask sizes and masked-pass work for a list of ignore counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = DEFAULT_IGNORE_LIST)]
        ignore_list: Vec<usize>,
    },
    /// Write a synthetic scene (embeddings, attention, manifest) to a directory.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        side: usize,
        #[arg(long, default_value_t = 35)]
        n_sys: usize,
        #[arg(long, default_value_t = 40)]
        n_usr: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 124)]
        ignore: usize,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct BudgetOverride {
    /// Keep this many image tokens (overrides the manifest).
    #[arg(long)]
    pub keep: Option<usize>,
    /// Ignore this many image tokens (overrides the manifest).
    #[arg(long)]
    pub ignore: Option<usize>,
}

impl BudgetOverride {
    fn apply(&self, run: &mut Run) {
        if let Some(k) = self.keep {
            run.budget = Budget::Keep(k);
        } else if let Some(i) = self.ignore {
            run.budget = Budget::Ignore(i);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySel {
    Last,
    Index(usize),
}

impl std::str::FromStr for QuerySel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "last" => Ok(QuerySel::Last),
            other => other
                .parse()
                .map(QuerySel::Index)
                .map_err(|_| format!("query must be `last` or an index, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    /// Cluster the 2-D projection.
    Plane,
    /// Cluster the full embedding space.
    Full,
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(_) => 2,
        }
    }

    /// One-line diagnostic: `ERR:<code>: <message>`.
    pub fn line(&self) -> String {
        let (code, msg) = match self {
            CliError::Usage(m) => ("Usage", m.clone()),
            CliError::Run(e) => (e.code(), e.to_string()),
        };
        let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("ERR:{code}: {msg}")
    }
}

fn write_out(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `image_index,score,kept`, best score first.
pub fn selection_csv(sel: &SimilaritySelection) -> Vec<u8> {
    let kept = sel.kept_flags();
    csv_bytes(
        &["image_index", "score", "kept"],
        rank_by_score(&sel.scores).into_iter().map(|i| {
            vec![
                i.to_string(),
                sel.scores[i].to_string(),
                (kept[i] as u8).to_string(),
            ]
        }),
    )
}

fn select_run(run: &Run) -> Result<SimilaritySelection> {
    select_tokens(
        &run.img,
        &run.txt,
        run.metric,
        run.keep_count()?,
        run.strategy,
    )
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Select { common, budget } => {
            let mut run = load_run(&common.manifest)?;
            budget.apply(&mut run);
            let sel = select_run(&run)?;
            write_out(&common.out, &selection_csv(&sel))?;
        }
        Command::Mask { common, budget } => {
            let mut run = load_run(&common.manifest)?;
            budget.apply(&mut run);
            let sel = select_run(&run)?;
            let mask = build_mask(&run.seg, &sel.kept_image_indices)?;
            let t = Tensor::new(vec![mask.len() as u64], mask.to_f32())?;
            write_tensor(&t, &common.out)?;
        }
        Command::Heatmap {
            common,
            query,
            head_agg,
        } => {
            let outs: Vec<&str> = common.out.split(',').collect();
            for o in &outs {
                if !(o.ends_with(".pgm") || o.ends_with(".csv")) {
                    return Err(CliError::Usage(format!(
                        "heatmap output {o:?} must end in .pgm or .csv"
                    )));
                }
            }
            let run = load_run(&common.manifest)?;
            let a = run.attention()?;
            let q = match query {
                QuerySel::Last => a.n_query().saturating_sub(1),
                QuerySel::Index(i) => i,
            };
            let grid = influence_heatmap(a, &run.seg, q, head_agg)?;
            for o in outs {
                let body = if o.ends_with(".pgm") {
                    grid.to_pgm()
                } else {
                    grid.to_csv()
                };
                write_out(o, body.as_bytes())?;
            }
        }
        Command::Cluster {
            common,
            k,
            seed,
            space,
        } => {
            let run = load_run(&common.manifest)?;
            let seed = seed.unwrap_or(run.seed);
            let proj = project_2d(&run.img)?;
            let assign = match space {
                Space::Plane => kmeans_2d(&proj, k, seed)?,
                Space::Full => kmeans_embedding(&run.img, k, seed)?,
            };
            let ignored = select_run(&run)?.ignored_indices();
            let mut flag = vec![false; run.seg.n_img()];
            ignored.iter().for_each(|&i| flag[i] = true);
            let csv = csv_bytes(
                &["index", "x", "y", "label", "ignored"],
                proj.points.iter().enumerate().map(|(i, p)| {
                    vec![
                        i.to_string(),
                        p[0].to_string(),
                        p[1].to_string(),
                        assign.labels[i].to_string(),
                        (flag[i] as u8).to_string(),
                    ]
                }),
            );
            write_out(&common.out, &csv)?;
            let hist = overlap_report(&ignored, &assign)?;
            for (c, (size, hit)) in assign.sizes().iter().zip(&hist).enumerate() {
                println!("cluster{c}\tsize={size}\tignored={hit}");
            }
        }
        Command::Ablate {
            common,
            band,
            ignore,
            seed,
        } => {
            let run = load_run(&common.manifest)?;
            let sel = importance_band_selection(
                &run.img,
                &run.txt,
                run.metric,
                band,
                ignore,
                seed.unwrap_or(run.seed),
            )?;
            write_out(&common.out, &selection_csv(&sel))?;
        }
        Command::Sweep {
            common,
            ignore_list,
        } => {
            let run = load_run(&common.manifest)?;
            let a = run.attention()?;
            let mut rows = Vec::with_capacity(ignore_list.len());
            for ignore in ignore_list {
                let keep = Budget::Ignore(ignore).keep_count(run.seg.n_img())?;
                let sel = select_tokens(&run.img, &run.txt, run.metric, keep, run.strategy)?;
                let mask = build_mask(&run.seg, &sel.kept_image_indices)?;
                let pass = simulate_masked_pass(a, &mask)?;
                let mut kept = sel.kept_image_indices.clone();
                kept.sort_unstable();
                let kept: Vec<String> = kept.iter().map(|i| i.to_string()).collect();
                rows.push(vec![
                    ignore.to_string(),
                    sel.kept_image_indices.len().to_string(),
                    mask.popcount().to_string(),
                    pass.active_key_count.to_string(),
                    pass.multiply_accumulate_count.to_string(),
                    pass.degenerate_rows.len().to_string(),
                    kept.join(";"),
                ]);
            }
            let csv = csv_bytes(
                &[
                    "ignored",
                    "kept",
                    "mask_popcount",
                    "active_keys",
                    "mac_count",
                    "degenerate_rows",
                    "kept_indices",
                ],
                rows,
            );
            write_out(&common.out, &csv)?;
        }
        Command::Synth {
            out_dir,
            seed,
            side,
            n_sys,
            n_usr,
            dim,
            heads,
            ignore,
        } => write_synth(&out_dir, seed, side, n_sys, n_usr, dim, heads, ignore)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_synth(
    dir: &Path,
    seed: u64,
    side: usize,
    n_sys: usize,
    n_usr: usize,
    dim: usize,
    heads: usize,
    ignore: usize,
) -> Result<(), CliError> {
    if side == 0 || n_usr == 0 || dim == 0 || heads == 0 {
        return Err(CliError::Usage(
            "side, n-usr, dim and heads must be positive".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let scene = synth::scene(SceneConfig {
        side,
        n_sys,
        n_usr,
        dim,
        objects: 4,
        seed,
    });
    let sel = select_tokens(
        &scene.img,
        &scene.txt,
        Default::default(),
        0,
        Default::default(),
    )?;
    let (lo, hi) = sel
        .scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| {
            (l.min(s), h.max(s))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let relevance: Vec<f64> = sel.scores.iter().map(|s| (s - lo) / span).collect();
    let attention = scene.attention(heads, &relevance, seed.wrapping_add(1));

    write_tensor(&Tensor::from(&scene.img), dir.join("image.sigt"))?;
    write_tensor(&Tensor::from(&scene.txt), dir.join("text.sigt"))?;
    write_tensor(&Tensor::from(&attention), dir.join("attention.sigt"))?;
    let manifest = RunManifest {
        n_sys,
        n_img: side * side,
        n_usr,
        metric: "cosine".into(),
        keep: None,
        ignore: Some(ignore.min(side * side)),
        strategy: "max-over-text".into(),
        seed,
        image_embeddings: Some("image.sigt".into()),
        feature_map: None,
        alignment: None,
        text_embeddings: "text.sigt".into(),
        attention: Some("attention.sigt".into()),
    };
    write_out(dir.join("manifest.json"), manifest.to_json().as_bytes())?;
    Ok(())
}
