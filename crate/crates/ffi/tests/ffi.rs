use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use occusense::eval::occupancy_from_events;
use occusense::model::TransformerConfig;
use occusense::pipeline::{
    extract_features, Dataset, Estimator, EstimatorConfig, FrontEndConfig, PlanSource, WindowSpec,
};
use occusense::synth::{ScenarioConfig, ScenarioPlan};
use occusense_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { occ_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

fn scenario() -> ScenarioPlan {
    let cfg = ScenarioConfig {
        duration_s: 40,
        arrival_rate: 120.0,
        seed: 3,
        ..Default::default()
    };
    ScenarioPlan::new(cfg).unwrap()
}

fn tiny_checkpoint(dir: &std::path::Path, plan: &ScenarioPlan) -> std::path::PathBuf {
    let feats = extract_features(&mut PlanSource::new(plan), &FrontEndConfig::default()).unwrap();
    let truth = occupancy_from_events(&plan.events, plan.config.duration_s).unwrap();
    let ds = Dataset::new(feats, &truth, 2).unwrap();
    let cfg = EstimatorConfig {
        transformer: TransformerConfig {
            layers: 1,
            heads: 2,
            d_emb: 8,
            d_head: 4,
            window: 5,
            scaled_attention: false,
        },
        windows: WindowSpec {
            window: 5,
            threshold: 1.0,
            ..Default::default()
        },
        epochs: 1,
        clip: Some(1.0),
        epsilon: Some(2.0),
        ..Default::default()
    };
    let (est, _) = Estimator::fit(&ds, &[0], &cfg).unwrap();
    let path = dir.join("tiny.ocpf");
    est.save(&path).unwrap();
    path
}

#[test]
fn version_and_null_handling() {
    let v = unsafe { CStr::from_ptr(occ_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    let status = unsafe { occ_frontend_new(16_000, ptr::null_mut()) };
    assert_eq!(status, OccStatus::NullPointer);
    assert!(last_error().contains("null"));
    let mut est = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ocpf").unwrap();
    assert_eq!(
        unsafe { occ_estimator_load(missing.as_ptr(), &mut est) },
        OccStatus::Io
    );
    assert!(est.is_null());
    unsafe {
        occ_frontend_free(ptr::null_mut());
        occ_estimator_free(ptr::null_mut());
    }
}

#[test]
fn analyse_and_predict_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let plan = scenario();
    let ckpt = CString::new(tiny_checkpoint(dir.path(), &plan).to_str().unwrap()).unwrap();

    let mut fe = ptr::null_mut();
    assert_eq!(unsafe { occ_frontend_new(16_000, &mut fe) }, OccStatus::Ok);
    let (gl, sl) = (occ_grid_len(), occ_summary_len());
    let n = 8;
    let audio = plan.render(0, n as u64).unwrap();
    let channels = audio.num_channels();
    let (mut grids, mut sums, mut probs) = (vec![0.0; n * gl], vec![0.0; n * sl], vec![0.0; n]);
    for s in 0..n {
        let clip = audio.slice(s * 16_000, 16_000).unwrap();
        let interleaved: Vec<f64> = (0..16_000)
            .flat_map(|i| (0..channels).map(move |m| (i, m)))
            .map(|(i, m)| clip.channel(m)[i])
            .collect();
        let st = unsafe {
            occ_frontend_analyze(
                fe,
                interleaved.as_ptr(),
                channels,
                16_000,
                &mut probs[s],
                grids[s * gl..].as_mut_ptr(),
                sums[s * sl..].as_mut_ptr(),
            )
        };
        assert_eq!(st, OccStatus::Ok, "{}", last_error());
    }
    let short = vec![0.0; 100 * channels];
    let st = unsafe {
        occ_frontend_analyze(
            fe,
            short.as_ptr(),
            channels,
            100,
            &mut probs[0],
            grids.as_mut_ptr(),
            sums.as_mut_ptr(),
        )
    };
    assert_eq!(st, OccStatus::Data);

    let mut est = ptr::null_mut();
    assert_eq!(
        unsafe { occ_estimator_load(ckpt.as_ptr(), &mut est) },
        OccStatus::Ok,
        "{}",
        last_error()
    );
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut spent = 0.0;
    let predict = |out: &mut [f64], spent: &mut f64| unsafe {
        occ_estimator_predict(
            est,
            grids.as_ptr(),
            sums.as_ptr(),
            probs.as_ptr(),
            n,
            1,
            42,
            out.as_mut_ptr(),
            spent,
        )
    };
    assert_eq!(
        predict(&mut a, &mut spent),
        OccStatus::Ok,
        "{}",
        last_error()
    );
    assert_eq!(predict(&mut b, &mut spent), OccStatus::Ok);
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(spent, 2.0 * n as f64);
    unsafe {
        occ_estimator_free(est);
        occ_frontend_free(fe);
    }
}

#[test]
fn seal_unseal_roundtrip_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand::rngs::OsRng;
    let sk = occusense::store::generate_keypair(1024, &mut rng).unwrap();
    let (skp, pkp) = (dir.path().join("k.pem"), dir.path().join("k.pub.pem"));
    occusense::store::write_private_key_pem(&skp, &sk).unwrap();
    occusense::store::write_public_key_pem(&pkp, &sk.to_public_key()).unwrap();
    let (skc, pkc) = (
        CString::new(skp.to_str().unwrap()).unwrap(),
        CString::new(pkp.to_str().unwrap()).unwrap(),
    );
    let tag = CString::new("csv").unwrap();
    let payload = b"second,count\n0,1\n";
    let mut sealed = OccBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    let st = unsafe {
        occ_seal(
            pkc.as_ptr(),
            payload.as_ptr(),
            payload.len(),
            tag.as_ptr(),
            7,
            &mut sealed,
        )
    };
    assert_eq!(st, OccStatus::Ok, "{}", last_error());
    let mut opened = OccBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    assert_eq!(
        unsafe { occ_unseal(skc.as_ptr(), sealed.data, sealed.len, &mut opened) },
        OccStatus::Ok
    );
    assert_eq!(
        unsafe { std::slice::from_raw_parts(opened.data, opened.len) },
        payload
    );
    let mut tampered = unsafe { std::slice::from_raw_parts(sealed.data, sealed.len) }.to_vec();
    let last = tampered.len() - 1;
    tampered[last] ^= 0x80;
    let mut junk = OccBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    let st = unsafe { occ_unseal(skc.as_ptr(), tampered.as_ptr(), tampered.len(), &mut junk) };
    assert_eq!(st, OccStatus::Authentication);
    unsafe {
        occ_buffer_free(sealed);
        occ_buffer_free(opened);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/occusense.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ OccStatus s = OCC_STATUS_OK; OccEstimator *e = 0; (void)e; return (int)s; }}\n"
        ),
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; header check skipped");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
