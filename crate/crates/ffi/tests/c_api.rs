use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use patchcert_ffi::*;

fn last_error() -> String {
    let p = pc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    model: *mut PcModel,
    image: *mut PcImage,
    masks: *mut PcMaskSet,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            pc_model_free(self.model);
            pc_image_free(self.image);
            pc_mask_set_free(self.masks);
        }
    }
}

fn fixture() -> Fixture {
    // class 0 certifies; class 1 fails only when masks 1 and 4 are both applied
    let json = CString::new(
        r#"{"c":2,"classes":[{"features":[[0,0],[9,9]],"default":1},{"features":[[5,5],[0,5]],"default":0}]}"#,
    )
    .unwrap();
    let mut f = Fixture {
        model: ptr::null_mut(),
        image: ptr::null_mut(),
        masks: ptr::null_mut(),
    };
    let pixels = vec![1.0f32; 100];
    unsafe {
        assert_eq!(pc_model_from_synthetic_json(json.as_ptr(), &mut f.model), PcStatus::Ok);
        assert_eq!(pc_image_new(10, 10, 1, pixels.as_ptr(), pixels.len(), &mut f.image), PcStatus::Ok);
        assert_eq!(pc_mask_set_generate(10, 10, 2, 2, 3, 3, &mut f.masks), PcStatus::Ok);
    }
    f
}

#[test]
fn handles_and_queries() {
    let f = fixture();
    unsafe {
        assert_eq!(pc_model_num_classes(f.model), 2);
        assert_eq!(pc_mask_set_len(f.masks), 9);
        assert_eq!(pc_mask_set_is_covering(f.masks), 1);
        let mut s = ptr::null_mut();
        assert_eq!(pc_mask_set_to_json(f.masks, &mut s), PcStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_owned();
        pc_string_free(s);
        assert!(text.contains("\"masks\""));
    }
}

#[test]
fn infer_and_certify() {
    let f = fixture();
    let mut labels = [9u8; 2];
    unsafe {
        assert_eq!(pc_demux_infer(f.model, f.image, f.masks, 0.4, labels.as_mut_ptr(), 2), PcStatus::Ok);
    }
    assert_eq!(labels, [1, 1]);
    let truth = [1u8, 1];
    let mut summary = PcCertSummary::default();
    let mut json = ptr::null_mut();
    unsafe {
        let st = pc_demux_certify(
            f.model,
            f.image,
            f.masks,
            truth.as_ptr(),
            2,
            0.4,
            PcAttackerMode::Fn,
            &mut summary,
            &mut json,
        );
        assert_eq!(st, PcStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        pc_string_free(json);
        assert!(text.contains("\"lambdas\""));
    }
    assert_eq!((summary.tp_lower, summary.fp_upper, summary.fn_upper), (1, 0, 1));
    assert_eq!(summary.fn_new, 1);
    assert_eq!(summary.tp_location, 1);
}

#[test]
fn errors_are_reported() {
    let f = fixture();
    let mut model = ptr::null_mut();
    let bad = CString::new("{\"c\":3,\"classes\":[]}").unwrap();
    unsafe {
        assert_eq!(pc_model_from_synthetic_json(bad.as_ptr(), &mut model), PcStatus::Config);
        assert!(model.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(pc_model_from_synthetic_json(ptr::null(), &mut model), PcStatus::NullPointer);
        assert!(last_error().contains("json"));
        let mut ms = ptr::null_mut();
        assert_eq!(pc_mask_set_generate(10, 10, 11, 2, 3, 3, &mut ms), PcStatus::Config);
        assert!(last_error().contains("rows"));
        let mut labels = [0u8; 3];
        assert_eq!(
            pc_demux_infer(f.model, f.image, f.masks, 0.5, labels.as_mut_ptr(), 3),
            PcStatus::InvalidArgument
        );
        let truth = [1u8, 2];
        let mut s = PcCertSummary::default();
        let st = pc_demux_certify(
            f.model,
            f.image,
            f.masks,
            truth.as_ptr(),
            2,
            0.5,
            PcAttackerMode::Worst,
            &mut s,
            ptr::null_mut(),
        );
        assert_eq!(st, PcStatus::InvalidArgument);
        assert_eq!(pc_model_num_classes(ptr::null()), 0);
        pc_model_free(ptr::null_mut());
        pc_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/patchcert.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "pc_last_error_message",
        "pc_model_from_synthetic_json",
        "pc_mask_set_generate",
        "pc_demux_certify",
        "PcCertSummary",
        "PC_STATUS_OK",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // compile the header as C when a compiler is available
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99"])
        .arg(&header)
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
