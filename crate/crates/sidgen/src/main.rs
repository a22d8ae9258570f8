use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sidgen::config::PipelineConfig;
use sidgen::pipeline::{annotate, evaluate_model, init_model};
use sidgen_core::catalog::{
    catalog_to_bytes, events_to_bytes, generate_catalog, generate_events, parse_catalog, parse_events, parse_profiles,
    profiles_to_bytes,
};
use sidgen_core::dataset::{build_examples, examples_to_bytes, parse_examples, split};
use sidgen_core::decoder::{decode, DecodeMode};
use sidgen_core::eval::{compare, evaluate_sids, render_deltas, sid_candidates, EvalReport};
use sidgen_core::model::{ground, train, GroundStage, PromptContext, ScorerParams};
use sidgen_core::quantizer::fit;
use sidgen_core::sid_index::build_lookup;
use sidgen_core::{Codebook, ControlToken, LookupTable};
use sidgen_serve::client;
use sidgen_serve::{ArtifactPaths, RecommendRequest, ReloadRequest, ServeConfig, Service, ServingState};
use tracing::info;

#[derive(Parser)]
#[command(name = "sidgen", version, about = "Semantic-ID generative retrieval pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic catalog, profiles and interaction log.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the residual k-means codebook over catalog embeddings.
    BuildSids {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode the catalog and write the id-to-episodes lookup table.
    RebuildLookup {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Random-grouping resamples for the collision similarity baseline.
        #[arg(long, default_value_t = 0)]
        resamples: usize,
    },
    /// Label targets and write train/eval example files.
    BuildDataset {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        lookup: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a freshly initialised scorer checkpoint.
    Init {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align id embeddings and heads with content embeddings.
    Ground {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        /// embeddings, heads or both
        #[arg(long, default_value = "both")]
        stage: GroundStage,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-forced training on labelled examples.
    Train {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline Recall/HitRate/NDCG by familiarity segment.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        lookup: PathBuf,
        #[arg(long, default_value_t = 30)]
        k: usize,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Count hits on decoded ids instead of resolved episodes.
        #[arg(long)]
        sid_level: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the key/value report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Report to compare against (same eval set and k).
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Fail unless overall recall is strictly above the baseline's.
        #[arg(long, requires = "baseline")]
        require_gain: bool,
    },
    /// Decode candidates for one user and print `episode_id<TAB>log_prob`.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lookup: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        user: String,
        /// File with one episode id per line, oldest first.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value = "unfamiliar")]
        control: ControlToken,
        #[arg(long, default_value_t = 30)]
        k: usize,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[command(flatten)]
        endpoint: Endpoint,
        #[arg(long, env = "SIDGEN_CACHE_TTL_SECS", default_value_t = 60)]
        cache_ttl_secs: u64,
        #[arg(long, default_value_t = 30)]
        beams: usize,
    },
    /// Ask a running service to reload its artifacts.
    ReloadSignal {
        #[command(flatten)]
        endpoint: Endpoint,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        codebook: Option<String>,
        #[arg(long)]
        lookup: Option<String>,
        #[arg(long)]
        catalog: Option<String>,
        #[arg(long)]
        profiles: Option<String>,
    },
    /// Send one recommendation request to a running service.
    Recommend {
        #[command(flatten)]
        endpoint: Endpoint,
        #[arg(long)]
        user: String,
        #[arg(long, value_delimiter = ',')]
        history: Vec<String>,
        #[arg(long, default_value = "unfamiliar")]
        control: ControlToken,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        locale: Option<String>,
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Print a running service's health report.
    Health {
        #[command(flatten)]
        endpoint: Endpoint,
    },
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value = "beam")]
    mode: DecodeMode,
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    decode_seed: Option<u64>,
    /// Allow ids that are absent from the lookup table.
    #[arg(long)]
    unconstrained: bool,
}

impl DecodeArgs {
    fn resolve(&self, config: &PipelineConfig) -> sidgen_core::decoder::DecodeConfig {
        let mut d = config.decode.clone();
        d.mode = self.mode;
        d.beam_width = self.beams.unwrap_or(d.beam_width);
        d.temperature = self.temperature.unwrap_or(d.temperature);
        d.top_p = self.top_p.unwrap_or(d.top_p);
        d.num_candidates = self.samples.unwrap_or(d.num_candidates);
        d.seed = self.decode_seed.unwrap_or(d.seed);
        d.constrained = !self.unconstrained;
        d
    }
}

#[derive(Args)]
struct ArtifactArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    lookup: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
}

#[derive(Args)]
struct Endpoint {
    #[arg(long, env = "SIDGEN_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "SIDGEN_PORT", default_value_t = 8080)]
    port: u16,
}

impl Endpoint {
    fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<ScorerParams> {
    ScorerParams::parse(&read(path)?).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_lookup(path: &Path) -> Result<LookupTable> {
    LookupTable::parse(&read(path)?).with_context(|| format!("loading lookup {}", path.display()))
}

fn load_codebook(path: &Path) -> Result<Codebook> {
    Codebook::parse(&read(path)?).with_context(|| format!("loading codebook {}", path.display()))
}

fn read_history(path: Option<&Path>) -> Result<Vec<String>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn http_json(resp: client::HttpResponse) -> Result<String> {
    if resp.status != 200 {
        bail!("service answered {}: {}", resp.status, resp.body);
    }
    Ok(resp.body)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = PipelineConfig::load(config.as_deref())?;
            let catalog = generate_catalog(&cfg.synth)?;
            let events = generate_events(&catalog, &cfg.synth)?;
            write(&out.join("catalog.jsonl"), &catalog_to_bytes(&catalog.episodes)?)?;
            write(&out.join("profiles.jsonl"), &profiles_to_bytes(&catalog.profiles)?)?;
            write(&out.join("events.jsonl"), &events_to_bytes(&events)?)?;
            info!(
                episodes = catalog.episodes.len(),
                users = catalog.profiles.len(),
                events = events.len(),
                "synthetic data written to {}",
                out.display()
            );
        }
        Command::BuildSids {
            catalog,
            k,
            m,
            seed,
            max_iters,
            config,
            out,
        } => {
            let q = PipelineConfig::load(config.as_deref())?.quantizer;
            let episodes = parse_catalog(&read(&catalog)?)?;
            let embeddings: Vec<Vec<f64>> = episodes.iter().map(|e| e.content_embedding.clone()).collect();
            let cb = fit(
                &embeddings,
                k.unwrap_or(q.k),
                m.unwrap_or(q.m),
                seed.unwrap_or(q.seed),
                max_iters.unwrap_or(q.max_iters),
            )?;
            let inertia = cb.level_inertia(&embeddings)?;
            write(&out, &cb.to_bytes()?)?;
            info!(k = cb.k(), m = cb.m(), ?inertia, "codebook written to {}", out.display());
        }
        Command::RebuildLookup {
            catalog,
            codebook,
            out,
            resamples,
        } => {
            let episodes = parse_catalog(&read(&catalog)?)?;
            let cb = load_codebook(&codebook)?;
            let built_at = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs() as i64)
                .unwrap_or(0);
            let table = build_lookup(&episodes, &cb, built_at)?;
            write(&out, &table.to_bytes()?)?;
            let stats = table.collision_stats(&episodes)?;
            println!("groups {}  episodes {}", table.groups().len(), table.n_episodes());
            println!("group size histogram {:?}", stats.histogram);
            match stats.intra_group_similarity {
                Some(s) => println!("mean intra-group cosine {s:.4}"),
                None => println!("no colliding groups"),
            }
            if resamples > 0 {
                let base = table.permutation_baseline(&episodes, resamples, 0)?;
                println!("random-grouping baseline {base:.4?}");
            }
            info!(build_id = %table.build_id, "lookup written to {}", out.display());
        }
        Command::BuildDataset {
            events,
            profiles,
            catalog,
            lookup,
            config,
            out,
        } => {
            let cfg = PipelineConfig::load(config.as_deref())?.dataset;
            let events = parse_events(&read(&events)?)?;
            let profiles = parse_profiles(&read(&profiles)?)?;
            let episodes = parse_catalog(&read(&catalog)?)?;
            let table = load_lookup(&lookup)?;
            let examples = build_examples(&events, &profiles, &episodes, &table, &cfg)?;
            let (train_set, eval_set) = split(examples, cfg.eval_fraction, cfg.seed)?;
            write(&out.join("train.jsonl"), &examples_to_bytes(&train_set)?)?;
            write(&out.join("eval.jsonl"), &examples_to_bytes(&eval_set)?)?;
            info!(train = train_set.len(), eval = eval_set.len(), "examples written to {}", out.display());
        }
        Command::Init {
            codebook,
            catalog,
            profiles,
            config,
            out,
        } => {
            let cfg = PipelineConfig::load(config.as_deref())?;
            let params = init_model(
                &load_codebook(&codebook)?,
                &parse_catalog(&read(&catalog)?)?,
                &parse_profiles(&read(&profiles)?)?,
                &cfg.model,
            )?;
            write(&out, &params.to_bytes()?)?;
            info!(checkpoint_id = %params.id(), parameters = params.len(), "checkpoint written to {}", out.display());
        }
        Command::Ground {
            checkpoint,
            catalog,
            codebook,
            stage,
            config,
            out,
        } => {
            let cfg = PipelineConfig::load(config.as_deref())?;
            let params = load_checkpoint(&checkpoint)?;
            let episodes = parse_catalog(&read(&catalog)?)?;
            let (params, log) = ground(params, &episodes, &load_codebook(&codebook)?, &cfg.ground, stage)?;
            write(&out, &params.to_bytes()?)?;
            let summary = |l: &[f64]| l.first().zip(l.last()).map(|(a, b)| format!("{a:.4} -> {b:.4}"));
            info!(
                embeddings = ?summary(&log.embed_losses),
                heads = ?summary(&log.head_losses),
                "grounded checkpoint written to {}",
                out.display()
            );
        }
        Command::Train {
            checkpoint,
            dataset,
            steps,
            config,
            out,
        } => {
            let mut cfg = PipelineConfig::load(config.as_deref())?.train;
            cfg.steps = steps.unwrap_or(cfg.steps);
            let params = load_checkpoint(&checkpoint)?;
            let examples = parse_examples(&read(&dataset)?)?;
            let (params, log) = train(params, &examples, &cfg)?;
            write(&out, &params.to_bytes()?)?;
            let (head, tail) = log.head_tail_means(50.min(cfg.steps.max(1)));
            info!(first = head, last = tail, checkpoint_id = %params.id(), "trained checkpoint written to {}", out.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            lookup,
            k,
            decode,
            sid_level,
            config,
            report,
            baseline,
            require_gain,
        } => {
            let cfg = PipelineConfig::load(config.as_deref())?;
            let params = load_checkpoint(&checkpoint)?;
            let table = load_lookup(&lookup)?;
            let examples = parse_examples(&read(&dataset)?)?;
            let dcfg = decode.resolve(&cfg);
            let result = if sid_level {
                let cands = sid_candidates(&params, &table, &examples, &dcfg)?;
                let mut r = evaluate_sids(&cands, &examples, k)?;
                annotate(&mut r, &params, &table, &dcfg);
                r.metadata.insert("level".into(), "sid".into());
                r
            } else {
                evaluate_model(&params, &table, &examples, &dcfg, k)?
            };
            print!("{}", result.render_table());
            if let Some(path) = &report {
                write(path, result.to_kv().as_bytes())?;
            }
            if let Some(path) = &baseline {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let base = EvalReport::parse_kv(&text)?;
                print!("{}", render_deltas(&compare(&base, &result)?));
                if require_gain && result.overall.recall <= base.overall.recall {
                    bail!(
                        "overall recall {} is not above the baseline {}",
                        result.overall.recall,
                        base.overall.recall
                    );
                }
            }
        }
        Command::Generate {
            checkpoint,
            lookup,
            profiles,
            user,
            history,
            control,
            k,
            decode: dargs,
        } => {
            let params = load_checkpoint(&checkpoint)?;
            let table = load_lookup(&lookup)?;
            let profiles = parse_profiles(&read(&profiles)?)?;
            let profile = profiles
                .iter()
                .find(|p| p.user_id == user)
                .with_context(|| format!("no profile for user {user:?}"))?;
            let history: Vec<_> = read_history(history.as_deref())?
                .iter()
                .filter_map(|e| table.sid_of(e).cloned())
                .collect();
            let ctx = PromptContext::new(
                params.tokens(),
                history,
                profile.cf_embedding.clone(),
                control,
                &profile.locale,
                &profile.affinity_topics,
            );
            let dcfg = dargs.resolve(&PipelineConfig::default());
            let trie = table.trie();
            let decoded = decode(&params, &ctx, &dcfg, Some(&trie))?;
            let mut exclude = HashSet::new();
            for (i, ep) in table.resolve_ranked(decoded.iter().map(|c| &c.sid), |_| true, &mut exclude, k) {
                println!("{ep}\t{}", decoded[i].log_prob);
            }
        }
        Command::Serve {
            artifacts,
            endpoint,
            cache_ttl_secs,
            beams,
        } => {
            let paths = ArtifactPaths {
                checkpoint: artifacts.checkpoint,
                codebook: artifacts.codebook,
                lookup: artifacts.lookup,
                catalog: artifacts.catalog,
                profiles: artifacts.profiles,
            };
            let state = ServingState::load(&paths)?;
            let config = ServeConfig {
                beam_width: beams,
                cache_ttl_secs,
                ..ServeConfig::default()
            };
            let service = Arc::new(Service::new(state, config)?);
            let addr = endpoint.addr();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                info!("listening on {}", listener.local_addr()?);
                sidgen_serve::serve(listener, service).await?;
                anyhow::Ok(())
            })?;
        }
        Command::ReloadSignal {
            endpoint,
            checkpoint,
            codebook,
            lookup,
            catalog,
            profiles,
        } => {
            let req = ReloadRequest {
                checkpoint,
                codebook,
                lookup,
                catalog,
                profiles,
            };
            let body = serde_json::to_vec(&req)?;
            println!("{}", http_json(client::post_json(&endpoint.addr(), "/v1/reload", &body)?)?);
        }
        Command::Recommend {
            endpoint,
            user,
            history,
            control,
            k,
            locale,
            exclude,
        } => {
            let req = RecommendRequest {
                user_id: Some(user),
                profile: None,
                history,
                control,
                k,
                locale,
                exclude,
            };
            let body = serde_json::to_vec(&req)?;
            println!("{}", http_json(client::post_json(&endpoint.addr(), "/v1/recommend", &body)?)?);
        }
        Command::Health { endpoint } => {
            println!("{}", http_json(client::get(&endpoint.addr(), "/healthz")?)?);
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
