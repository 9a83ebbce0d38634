use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ancogen::data::{corpus_mel_frames, fit_tokenizer, generate_synthetic_corpus, CorpusConfig, TokenizerConfig};
use ancogen::dsp::wav::read_wav;
use ancogen::inference::{TOKENIZER_FILE, VQVAE_FILE};
use ancogen::mae::{Mae, MaeConfig};
use ancogen::trainer::CHECKPOINT_FILE;
use ancogen::vqvae::{VqVae, VqvaeConfig};
use ancogen_ffi::*;

/// Briefly trained VQ-VAE and an untrained tiny MAE: enough to exercise the
/// plumbing, not the quality.
fn model_dir(dir: &Path) -> Vec<f64> {
    let cfg = CorpusConfig {
        speakers: 2,
        utterances_per_speaker: 1,
        degraded_per_utterance: 0,
        ..Default::default()
    };
    let corpus = generate_synthetic_corpus(&dir.join("corpus"), &cfg).unwrap();
    let mut vq = VqVae::new(VqvaeConfig {
        steps: 5,
        batch: 8,
        ..Default::default()
    })
    .unwrap();
    vq.train(&corpus_mel_frames(&corpus).unwrap()).unwrap();
    let tok = TokenizerConfig {
        content_clusters: 8,
        ..Default::default()
    };
    let m = fit_tokenizer(&corpus, &tok, 200, vq.config.f, vq.config.c).unwrap();
    let md = dir.join("model");
    std::fs::create_dir_all(&md).unwrap();
    vq.save(&md.join(VQVAE_FILE)).unwrap();
    m.save(&md.join(TOKENIZER_FILE)).unwrap();
    Mae::new(MaeConfig::tiny(), &m).unwrap().save(&md.join(CHECKPOINT_FILE)).unwrap();
    read_wav(&corpus.path(&corpus.records[0].clean)).unwrap().into_samples()
}

#[test]
fn load_analyze_resynthesize() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = model_dir(tmp.path());
    let dir = CString::new(tmp.path().join("model").to_str().unwrap()).unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(ancogen_pipeline_load(dir.as_ptr(), ptr::null(), &mut p), AncogenStatus::Ok);
        assert!(ancogen_last_error().is_null());
        assert_eq!(ancogen_pipeline_segment_samples(p), 32_000);

        let mut a = ptr::null_mut();
        assert_eq!(ancogen_analyze(p, samples.as_ptr(), samples.len(), &mut a), AncogenStatus::Ok);
        let frames = ancogen_attributes_frames(a);
        assert_eq!(frames, 200);
        let s = ancogen_attributes_speaker(a);
        assert!(s == 1 || s == 2);
        let mut buf = vec![0.0; frames];
        let mut n = 0;
        assert_eq!(
            ancogen_attributes_track(a, AncogenTrack::F0, buf.as_mut_ptr(), 10, &mut n),
            AncogenStatus::InvalidArgument
        );
        assert_eq!(
            ancogen_attributes_track(a, AncogenTrack::F0, buf.as_mut_ptr(), frames, &mut n),
            AncogenStatus::Ok
        );
        assert_eq!(n, frames);
        assert!(buf.iter().all(|&f| f == 0.0 || (50.0..=550.0).contains(&f)));
        ancogen_attributes_free(a);

        let edits = [AncogenEdit {
            kind: AncogenEditKind::PitchShift,
            value: 10.0,
        }];
        let mut out = ptr::null_mut();
        let mut report = ptr::null_mut();
        let st = ancogen_resynthesize(p, samples.as_ptr(), samples.len(), edits.as_ptr(), 1, &mut out, &mut report);
        assert_eq!(st, AncogenStatus::Ok);
        let mut len = 0;
        let y = ancogen_audio_samples(out, &mut len);
        assert_eq!(len, samples.len());
        assert!(std::slice::from_raw_parts(y, len).iter().all(|v| v.is_finite()));
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(report).to_str().unwrap()).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["edits"][0]["pitch_shift"], 10.0);
        ancogen_string_free(report);
        ancogen_audio_free(out);

        let bad = [AncogenEdit {
            kind: AncogenEditKind::SetSnr,
            value: 99.0,
        }];
        let st = ancogen_resynthesize(p, samples.as_ptr(), samples.len(), bad.as_ptr(), 1, &mut out, ptr::null_mut());
        assert_eq!(st, AncogenStatus::InvalidArgument);
        assert!(out.is_null());
        ancogen_pipeline_free(p);
    }
}

#[test]
fn header_compiles_as_c() {
    let inc = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(inc.join("ancogen.h")).unwrap();
    for f in ["ancogen_pipeline_load", "ancogen_resynthesize", "ancogen_last_error", "ANCOGEN_STATUS_OK"] {
        assert!(header.contains(f), "{f} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        "#include \"ancogen.h\"\nint main(void) { AncogenPipeline *p = 0; return ancogen_pipeline_load(\"m\", 0, &p) == ANCOGEN_STATUS_OK; }\n",
    )
    .unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(&inc).arg(&src).status() {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("no C compiler available, skipping: {e}"),
    }
}
