//! Subcommand implementations: thin compositions of library operations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sotkit::codec::{
    count_speakers, decode_sot_with, encode_sot, to_hyp_speakers, CodecMode, DecodeOptions,
    Repair,
};
use sotkit::manifest::{self, HypothesisRecord};
use sotkit::model::{
    dataset_accuracy, gradient_check, greedy_decode, randomize_class, toy_dataset, train_step,
    AdamW, AdapterConfig, Example, FeatureMatrix, LinearDecaySchedule, ModelConfig, ParamClass,
    ToyModel, ToyTaskConfig, TrainableMask,
};
use sotkit::score::{
    aggregate_report, pair_hypotheses, render_tables, score_group, AssignmentMode, Normalizer,
    ScoreOptions, ScoreUnit,
};
use sotkit::segment::{segment_session, SegmentationConfig};
use sotkit::simulate::{mix_waveforms, sample_group, wav, AudioBuffer, Pool, SimConfig, SimError};
use sotkit::types::{UtteranceGroup, Utterance};
use sotkit::vocab::{PromptSpec, Special, TokenSequence, Vocabulary, WordTokenizer};

use crate::{Cli, Command, Failure, ModeArg};

impl From<ModeArg> for CodecMode {
    fn from(m: ModeArg) -> CodecMode {
        match m {
            ModeArg::Plain => CodecMode::Plain,
            ModeArg::Timestamped => CodecMode::Timestamped,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Encode(args) => encode_cmd(cli, args),
        Command::Decode(args) => decode_cmd(cli, args),
        Command::Segment(args) => segment_cmd(cli, args),
        Command::Simulate(args) => simulate_cmd(cli, args),
        Command::Score(args) => score_cmd(cli, args),
        Command::Count(args) => count_cmd(cli, args),
        Command::DemoTrain(args) => demo_train_cmd(cli, args),
        Command::Gradcheck(args) => gradcheck_cmd(cli, args),
    }
}

/// Serialized token sequences, one group per line.
#[derive(Debug, Serialize, Deserialize)]
struct TokenRecord {
    group_id: String,
    ids: Vec<u32>,
}

fn read_token_records(path: &Path) -> Result<Vec<TokenRecord>, Failure> {
    let data = fs::read_to_string(path)
        .map_err(|e| Failure::new_format(format!("read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(line).map_err(|e| {
            Failure::new_format(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

impl Failure {
    fn new_format(message: String) -> Self {
        Failure { code: 2, message }
    }

    fn metric(message: String) -> Self {
        Failure { code: 3, message }
    }
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Failure> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serialize"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn echo(value: serde_json::Value) {
    println!("{value}");
}

// ---------------------------------------------------------------- encode --

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Grouped reference manifest (JSON-lines with group_id).
    #[arg(long)]
    refs: PathBuf,
    /// Vocabulary file; omit to derive one from the references.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Where to write a derived vocabulary.
    #[arg(long)]
    write_vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, default_value = "en")]
    language: String,
    /// Output token-sequence manifest.
    #[arg(long)]
    out: PathBuf,
    /// Optional human-readable rendering ("<|1.24|>" style timestamps).
    #[arg(long)]
    render: Option<PathBuf>,
}

/// Word-level vocabulary derived from the reference texts, in sorted order.
fn derive_vocab(groups: &[UtteranceGroup], language: &str) -> Result<Vocabulary, Failure> {
    let mut words: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for g in groups {
        for u in &g.utterances {
            for w in &u.words {
                words.insert(w.text.clone());
            }
        }
    }
    Ok(Vocabulary::with_default_timestamps(
        words.into_iter().collect(),
        &[language],
    )?)
}

fn encode_cmd(cli: &Cli, args: &EncodeArgs) -> Result<(), Failure> {
    let groups = manifest::load_grouped_manifest(&args.refs)?;
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::load(path)?,
        None => derive_vocab(&groups, &args.language)?,
    };
    if let Some(path) = &args.write_vocab {
        vocab.save(path)?;
    }
    let mode: CodecMode = args.mode.into();
    let prompt = PromptSpec::new(&args.language, mode == CodecMode::Timestamped);

    let records: Vec<TokenRecord> = groups
        .par_iter()
        .map(|g| {
            let seq = encode_sot(g, mode, &prompt, &vocab, &WordTokenizer)?;
            Ok(TokenRecord {
                group_id: g.group_id.clone(),
                ids: seq.ids,
            })
        })
        .collect::<Result<Vec<_>, sotkit::codec::CodecError>>()?;
    write_lines(&args.out, &records)?;

    if let Some(path) = &args.render {
        let mut text = String::new();
        for rec in &records {
            let rendered = vocab.render(&TokenSequence::new(rec.ids.clone()));
            text.push_str(&format!("{}\t{}\n", rec.group_id, rendered));
        }
        fs::write(path, text)?;
    }
    echo(json!({
        "command": "encode",
        "config": {"seed": cli.seed, "jobs": cli.jobs, "strict": cli.strict,
                   "mode": format!("{:?}", args.mode), "language": args.language,
                   "refs": args.refs, "vocab_size": vocab.len()},
        "groups": records.len(),
        "out": args.out,
    }));
    Ok(())
}

// ---------------------------------------------------------------- decode --

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Output hypothesis manifest.
    #[arg(long)]
    out: PathBuf,
    /// Repair report (lenient mode), one line per repaired group.
    #[arg(long)]
    repairs: Option<PathBuf>,
    /// Group span fallback for orphan begin timestamps.
    #[arg(long)]
    span_s: Option<f64>,
}

#[derive(Serialize)]
struct RepairRecord<'a> {
    group_id: &'a str,
    repairs: &'a [Repair],
}

fn decode_cmd(cli: &Cli, args: &DecodeArgs) -> Result<(), Failure> {
    let records = read_token_records(&args.tokens)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let mode: CodecMode = args.mode.into();
    let opts = DecodeOptions {
        strict: cli.strict,
        group_span_s: args.span_s,
    };

    let decoded: Vec<(String, sotkit::codec::DecodedGroup)> = records
        .par_iter()
        .map(|rec| {
            let seq = TokenSequence::new(rec.ids.clone());
            let d = decode_sot_with(&seq, mode, &vocab, &opts)?;
            Ok((rec.group_id.clone(), d))
        })
        .collect::<Result<Vec<_>, sotkit::codec::CodecError>>()?;

    let hyps: Vec<HypothesisRecord> = decoded
        .iter()
        .map(|(group_id, d)| HypothesisRecord {
            group_id: group_id.clone(),
            speakers: to_hyp_speakers(d),
        })
        .collect();
    manifest::write_hypothesis_manifest(&args.out, &hyps)?;

    let repaired = decoded.iter().filter(|(_, d)| !d.repairs.is_empty()).count();
    if let Some(path) = &args.repairs {
        let recs: Vec<RepairRecord> = decoded
            .iter()
            .filter(|(_, d)| !d.repairs.is_empty())
            .map(|(id, d)| RepairRecord {
                group_id: id,
                repairs: &d.repairs,
            })
            .collect();
        write_lines(path, &recs)?;
    }
    echo(json!({
        "command": "decode",
        "config": {"seed": cli.seed, "jobs": cli.jobs, "strict": cli.strict,
                   "mode": format!("{:?}", args.mode), "tokens": args.tokens},
        "groups": hyps.len(),
        "repaired_groups": repaired,
        "out": args.out,
    }));
    Ok(())
}

// --------------------------------------------------------------- segment --

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Reference manifest (one utterance per line).
    #[arg(long)]
    refs: PathBuf,
    /// Output grouped manifest.
    #[arg(long)]
    out: PathBuf,
    /// Optional group summary manifest.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    max_group_s: f64,
    /// Emit overlong groups (flagged) instead of dropping them.
    #[arg(long)]
    keep_overlong: bool,
}

fn segment_cmd(cli: &Cli, args: &SegmentArgs) -> Result<(), Failure> {
    let utts = manifest::load_reference_manifest(&args.refs)?;
    let mut sessions: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    for u in utts {
        sessions.entry(u.session_id.clone()).or_default().push(u);
    }
    let cfg = SegmentationConfig {
        max_group_s: args.max_group_s,
        drop_overlong: !args.keep_overlong,
    };
    let mut all_groups = Vec::new();
    let mut overlong = Vec::new();
    let mut dropped = 0;
    let session_count = sessions.len();
    for (_, mut sess) in sessions {
        sess.sort_by(|a, b| {
            a.interval
                .start_s
                .total_cmp(&b.interval.start_s)
                .then_with(|| a.speaker_id.cmp(&b.speaker_id))
        });
        let seg = segment_session(&sess, &cfg)?;
        all_groups.extend(seg.groups);
        overlong.extend(seg.overlong);
        dropped += seg.dropped;
    }
    manifest::write_grouped_manifest(&args.out, &all_groups)?;
    if let Some(path) = &args.groups {
        manifest::write_group_manifest(path, &all_groups)?;
    }
    echo(json!({
        "command": "segment",
        "config": {"seed": cli.seed, "jobs": cli.jobs, "strict": cli.strict,
                   "max_group_s": args.max_group_s, "keep_overlong": args.keep_overlong},
        "sessions": session_count,
        "groups": all_groups.len(),
        "dropped_overlong": dropped,
        "flagged_overlong": overlong,
        "out": args.out,
    }));
    Ok(())
}

// -------------------------------------------------------------- simulate --

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Single-talker utterance pool (reference manifest).
    #[arg(long)]
    pool: PathBuf,
    /// Number of groups to generate.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_speakers: usize,
    #[arg(long, default_value_t = 0.60)]
    overlap_low: f64,
    #[arg(long, default_value_t = 0.80)]
    overlap_high: f64,
    #[arg(long, default_value_t = 30.0)]
    max_group_s: f64,
    #[arg(long, default_value_t = 100)]
    max_retries: usize,
    /// Directory with one 16-bit PCM mono WAV per pool speaker
    /// (`<speaker>.wav`); enables audio mixing.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    /// Where mixed group WAVs go (requires --audio-dir).
    #[arg(long)]
    wav_dir: Option<PathBuf>,
}

fn simulate_cmd(cli: &Cli, args: &SimulateArgs) -> Result<(), Failure> {
    let pool_utts = manifest::load_reference_manifest(&args.pool)?;
    let pool = Pool::from_utterances(&pool_utts);
    let cfg = SimConfig {
        n_groups: args.n,
        max_speakers: args.max_speakers,
        max_group_s: args.max_group_s,
        overlap_range: (args.overlap_low, args.overlap_high),
        seed: cli.seed,
        max_retries: args.max_retries,
    };
    cfg.validate()?;

    let results: Vec<Result<UtteranceGroup, SimError>> = (0..args.n)
        .into_par_iter()
        .map(|i| sample_group(&pool, &cfg, i))
        .collect();
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(g) => groups.push(g),
            Err(SimError::PlacementFailure { .. }) => skipped.push(i),
            Err(e) => return Err(e.into()),
        }
    }
    manifest::write_grouped_manifest(&args.out, &groups)?;
    if let Some(path) = &args.groups {
        manifest::write_group_manifest(path, &groups)?;
    }

    let mut wavs_written = 0usize;
    if let Some(audio_dir) = &args.audio_dir {
        let wav_dir = args
            .wav_dir
            .as_ref()
            .ok_or_else(|| Failure::metric("--wav-dir is required with --audio-dir".into()))?;
        fs::create_dir_all(wav_dir)?;
        // source tracks per pool speaker, clipped per utterance
        let mut tracks: BTreeMap<String, AudioBuffer> = BTreeMap::new();
        for speaker in pool.speakers() {
            let path = audio_dir.join(format!("{speaker}.wav"));
            let buf = wav::read_wav_mono_16(&path)
                .map_err(|e| Failure::new_format(format!("{}: {e}", path.display())))?;
            tracks.insert(speaker.to_string(), buf);
        }
        // original pool intervals keyed by (speaker, word count): clip source
        for g in &groups {
            let mut clips: BTreeMap<String, AudioBuffer> = BTreeMap::new();
            for u in &g.utterances {
                let src = &tracks[&u.speaker_id];
                let sr = src.sample_rate as f64;
                // simulated utterances keep their duration; clip from the
                // start of the source track
                let len = ((u.interval.end_s - u.interval.start_s) * sr) as usize;
                let clip: Vec<f32> = src.samples.iter().copied().take(len).collect();
                clips.insert(
                    u.speaker_id.clone(),
                    AudioBuffer {
                        samples: clip,
                        sample_rate: src.sample_rate,
                    },
                );
            }
            let map: sotkit::simulate::AudioMap =
                clips.iter().map(|(k, v)| (k.clone(), v)).collect();
            let mixed = mix_waveforms(g, &map, &BTreeMap::new())?;
            wav::write_wav_mono_16(wav_dir.join(format!("{}.wav", g.group_id)), &mixed)?;
            wavs_written += 1;
        }
    }

    echo(json!({
        "command": "simulate",
        "config": {"seed": cli.seed, "jobs": cli.jobs, "strict": cli.strict,
                   "n": args.n, "max_speakers": args.max_speakers,
                   "overlap_range": [args.overlap_low, args.overlap_high],
                   "max_group_s": args.max_group_s, "max_retries": args.max_retries},
        "accepted": groups.len(),
        "skipped": skipped,
        "wavs": wavs_written,
        "out": args.out,
    }));
    Ok(())
}

// ----------------------------------------------------------------- score --

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Grouped reference manifest.
    #[arg(long)]
    refs: PathBuf,
    /// Hypothesis manifest.
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long, value_enum, default_value_t = UnitArg::Word)]
    unit: UnitArg,
    #[arg(long, default_value = "basic")]
    normalizer: String,
    /// Hungarian assignment instead of exhaustive search.
    #[arg(long)]
    hungarian: bool,
    /// LDER frame length in seconds.
    #[arg(long, default_value_t = 0.02)]
    frame_s: f64,
    /// Write the full JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write reference and hypothesis RTTM files into this directory.
    #[arg(long)]
    rttm_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum UnitArg {
    Word,
    Char,
}

fn score_cmd(cli: &Cli, args: &ScoreArgs) -> Result<(), Failure> {
    let refs = manifest::load_grouped_manifest(&args.refs)?;
    let hyps = manifest::load_hypothesis_manifest(&args.hyps)?;
    let normalizer = Normalizer::from_name(&args.normalizer)
        .ok_or_else(|| Failure::metric(format!("unknown normalizer {:?}", args.normalizer)))?;
    let opts = ScoreOptions {
        unit: match args.unit {
            UnitArg::Word => ScoreUnit::Word,
            UnitArg::Char => ScoreUnit::Char,
        },
        normalizer,
        assignment: if args.hungarian {
            AssignmentMode::Hungarian
        } else {
            AssignmentMode::Exhaustive
        },
        frame_s: args.frame_s,
    };

    let pairs = pair_hypotheses(&refs, &hyps)?;
    let scores = pairs
        .par_iter()
        .map(|(g, speakers)| score_group(g, speakers, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let report = aggregate_report(scores, &opts)?;

    print!("{}", render_tables(&report));
    if let Some(path) = &args.rttm_dir {
        fs::create_dir_all(path)?;
        fs::write(path.join("refs.rttm"), manifest::rttm_for_references(&refs))?;
        fs::write(path.join("hyps.rttm"), manifest::rttm_for_hypotheses(&hyps))?;
    }
    let run = json!({
        "seed": cli.seed, "jobs": cli.jobs, "strict": cli.strict,
        "unit": format!("{:?}", args.unit), "normalizer": args.normalizer,
        "assignment": if args.hungarian { "hungarian" } else { "exhaustive" },
        "frame_s": args.frame_s,
        "refs": args.refs, "hyps": args.hyps,
    });
    if let Some(path) = &args.report {
        let full = json!({"run": run, "report": report});
        fs::write(path, serde_json::to_string_pretty(&full).expect("serialize"))?;
    }
    echo(json!({
        "command": "score",
        "config": run,
        "groups": report.groups_scored,
        "error_rate": report.overall.rate,
        "lder": report.lder.as_ref().map(|l| l.rate),
        "speaker_count_accuracy": report.speaker_count_accuracy,
    }));
    Ok(())
}

// ----------------------------------------------------------------- count --

#[derive(Args, Debug)]
pub struct CountArgs {
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Per-group counts (JSON-lines); stdout summary only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CountRecord {
    group_id: String,
    speakers: usize,
}

fn count_cmd(cli: &Cli, args: &CountArgs) -> Result<(), Failure> {
    let records = read_token_records(&args.tokens)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let counts: Vec<CountRecord> = records
        .iter()
        .map(|rec| CountRecord {
            group_id: rec.group_id.clone(),
            speakers: count_speakers(&TokenSequence::new(rec.ids.clone()), &vocab),
        })
        .collect();
    if let Some(path) = &args.out {
        write_lines(path, &counts)?;
    }
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for c in &counts {
        *histogram.entry(c.speakers).or_default() += 1;
    }
    echo(json!({
        "command": "count",
        "config": {"seed": cli.seed, "jobs": cli.jobs, "strict": cli.strict,
                   "tokens": args.tokens},
        "groups": counts.len(),
        "histogram": histogram,
    }));
    Ok(())
}

// ------------------------------------------------------------ demo-train --

#[derive(Args, Debug)]
pub struct DemoTrainArgs {
    /// Output directory for all artifacts.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 32)]
    groups: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// `full` trains everything; `adapter` trains adapters, layer norms, and
    /// the speaker-change embedding row only.
    #[arg(long, default_value = "full")]
    mode: String,
    #[arg(long, default_value_t = 16)]
    bottleneck: usize,
    /// Stop early once teacher-forced accuracy reaches this value.
    #[arg(long, default_value_t = 0.999)]
    target_acc: f64,
    #[arg(long, default_value_t = 50)]
    eval_every: usize,
}

#[derive(Serialize)]
struct TrainLogLine {
    step: usize,
    loss: f64,
    lr: f64,
}

fn demo_train_cmd(cli: &Cli, args: &DemoTrainArgs) -> Result<(), Failure> {
    fs::create_dir_all(&args.out_dir)?;
    let task = ToyTaskConfig {
        n_groups: args.groups,
        seed: cli.seed,
        ..ToyTaskConfig::default()
    };
    let ds = toy_dataset::<f32>(&task);
    let sc_id = ds.vocab.special(Special::SpeakerChange);
    let eos_id = ds.vocab.special(Special::EndOfSequence);

    let mut model = ToyModel::<f32>::build(
        ModelConfig::toy(task.alphabet, ds.vocab.len()),
        cli.seed ^ 0x6d6f64,
    )?;
    let adapter_mode = match args.mode.as_str() {
        "full" => false,
        "adapter" => true,
        other => return Err(Failure::metric(format!("unknown mode {other:?}"))),
    };
    if adapter_mode {
        model.insert_adapters(AdapterConfig { bottleneck: args.bottleneck }, cli.seed ^ 0x6164)?;
    }
    let mask = if adapter_mode {
        model.adapter_mask(sc_id)
    } else {
        TrainableMask::all(&model.store, true)
    };
    let mut opt = AdamW::new(&model.store);
    let schedule = LinearDecaySchedule {
        lr0: args.lr,
        total_steps: args.steps,
    };

    let examples: Vec<&Example<f32>> = ds.items.iter().map(|i| &i.example).collect();
    let mut log = Vec::new();
    let mut steps_run = 0usize;
    let mut accuracy = 0.0;
    for step in 0..args.steps {
        let batch: Vec<&Example<f32>> = (0..args.batch.max(1))
            .map(|k| examples[(step * args.batch + k) % examples.len()])
            .collect();
        let loss = train_step(&mut model, &batch, &mask, &mut opt, schedule.lr(step), step)?;
        steps_run = step + 1;
        if step % 10 == 0 || step + 1 == args.steps {
            log.push(TrainLogLine {
                step,
                loss,
                lr: schedule.lr(step),
            });
        }
        if steps_run % args.eval_every == 0 {
            accuracy = dataset_accuracy(&model, &ds.items);
            log::info!("step {step}: loss {loss:.4}, accuracy {accuracy:.4}");
            if accuracy >= args.target_acc {
                break;
            }
        }
    }
    if accuracy == 0.0 {
        accuracy = dataset_accuracy(&model, &ds.items);
    }

    // greedy decoding + lenient decode + scoring over the training groups
    let hyps: Vec<HypothesisRecord> = ds
        .items
        .iter()
        .map(|item| {
            let out = greedy_decode(
                &model,
                &item.example.features,
                &item.example.prompt_ids,
                eos_id,
                60,
            )?;
            let decoded = decode_sot_with(
                &TokenSequence::new(out.ids),
                CodecMode::Timestamped,
                &ds.vocab,
                &DecodeOptions {
                    strict: false,
                    group_span_s: Some(item.group.span_s()),
                },
            )
            .expect("lenient decode is total");
            Ok(HypothesisRecord {
                group_id: item.group.group_id.clone(),
                speakers: to_hyp_speakers(&decoded),
            })
        })
        .collect::<Result<Vec<_>, sotkit::model::ModelError>>()?;

    let groups: Vec<UtteranceGroup> = ds.items.iter().map(|i| i.group.clone()).collect();
    let opts = ScoreOptions {
        unit: ScoreUnit::Word,
        normalizer: Normalizer::None,
        assignment: AssignmentMode::Exhaustive,
        frame_s: task.resolution_s,
    };
    let pairs = pair_hypotheses(&groups, &hyps)?;
    let scores = pairs
        .iter()
        .map(|(g, speakers)| score_group(g, speakers, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let report = aggregate_report(scores, &opts)?;

    // artifacts
    ds.vocab.save(args.out_dir.join("vocab.json"))?;
    manifest::write_grouped_manifest(args.out_dir.join("refs.jsonl"), &groups)?;
    manifest::write_hypothesis_manifest(args.out_dir.join("hyps.jsonl"), &hyps)?;
    model.save_checkpoint(args.out_dir.join("checkpoint.json"), Some(&mask))?;
    write_lines(&args.out_dir.join("train_log.jsonl"), &log)?;
    fs::write(args.out_dir.join("tables.txt"), render_tables(&report))?;
    let train_cfg = json!({
        "seed": cli.seed, "jobs": cli.jobs, "strict": cli.strict,
        "groups": args.groups, "steps": args.steps, "batch": args.batch,
        "lr": args.lr, "mode": args.mode, "bottleneck": args.bottleneck,
        "target_acc": args.target_acc,
    });
    fs::write(
        args.out_dir.join("report.json"),
        serde_json::to_string_pretty(&json!({"run": train_cfg, "report": report}))
            .expect("serialize"),
    )?;
    fs::write(
        args.out_dir.join("train_config.json"),
        serde_json::to_string_pretty(&train_cfg).expect("serialize"),
    )?;

    echo(json!({
        "command": "demo-train",
        "config": train_cfg,
        "steps_run": steps_run,
        "teacher_forced_accuracy": accuracy,
        "token_error_rate": report.overall.rate,
        "speaker_count_accuracy": report.speaker_count_accuracy,
        "lder": report.lder.as_ref().map(|l| l.rate),
        "out_dir": args.out_dir,
    }));
    Ok(())
}

// ------------------------------------------------------------- gradcheck --

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 4)]
    per_tensor: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn gradcheck_cmd(cli: &Cli, args: &GradcheckArgs) -> Result<(), Failure> {
    let cfg = ModelConfig {
        feat_dim: 5,
        width: args.width,
        heads: 2,
        ff_dim: args.width * 2,
        enc_layers: 1,
        dec_layers: 1,
        vocab_size: 12,
        max_src_len: 16,
        max_tgt_len: 16,
        downsample: 2,
    };
    let mut model = ToyModel::<f64>::build(cfg, cli.seed ^ 0x67)?;
    model.insert_adapters(AdapterConfig { bottleneck: 3 }, cli.seed ^ 0x68)?;
    randomize_class(&mut model, ParamClass::Adapter, 0.3, cli.seed ^ 0x69);

    let mut state = cli.seed.wrapping_add(1);
    let data: Vec<f64> = (0..5 * 7)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        })
        .collect();
    let features = FeatureMatrix::from_flat(5, 7, data)?;
    let example = Example {
        features,
        prompt_ids: vec![0, 1],
        payload_ids: vec![3, 7, 2, 10],
    };

    let report = gradient_check(&mut model, &example, args.step, args.per_tensor, cli.seed ^ 0x6a)?;
    for (class, check) in &report.per_class {
        eprintln!(
            "{:<16} checked {:>4}  max relative error {:.3e}",
            format!("{class:?}"),
            check.checked,
            check.max_rel_err
        );
    }
    echo(json!({
        "command": "gradcheck",
        "config": {"seed": cli.seed, "width": args.width, "step": args.step,
                   "per_tensor": args.per_tensor, "tol": args.tol},
        "elements_checked": report.elements_checked,
        "worst_rel_err": report.worst_rel_err,
        "pass": report.passes(args.tol),
    }));
    if !report.passes(args.tol) {
        return Err(Failure::metric(format!(
            "gradient check failed: worst relative error {:.3e} > {:.1e}",
            report.worst_rel_err, args.tol
        )));
    }
    Ok(())
}
