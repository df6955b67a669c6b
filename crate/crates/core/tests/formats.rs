use std::io::Read;
use std::path::PathBuf;

use dissect_core::io::{
    parse_manifest, read_nifti, read_tensor, write_nifti, write_tensor, IntensityUnit, Tensor, TensorData, Volume,
};
use nalgebra::{Matrix3, Point3};
use proptest::prelude::*;
use serde::Deserialize;

fn fixture(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn gunzip(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    flate2::read::GzDecoder::new(bytes).read_to_end(&mut out).unwrap();
    out
}

#[test]
fn numpy_float64_values() {
    let t = read_tensor(&fixture("f64_zero_onehalf.npy")).unwrap();
    assert_eq!(t.shape(), [2]);
    assert_eq!(t.data(), &TensorData::Float64(vec![0.0, 1.5]));
}

#[test]
fn numpy_int16_and_zeros() {
    let t = read_tensor(&fixture("i16_2x2x2.npy")).unwrap();
    assert_eq!(t.shape(), [2, 2, 2]);
    assert_eq!(t.data(), &TensorData::Int16((0..8).collect()));
    let z = read_tensor(&fixture("f32_2x3_zeros.npy")).unwrap();
    assert_eq!(z.shape(), [2, 3]);
    assert_eq!(z.data(), &TensorData::Float32(vec![0.0; 6]));
}

#[test]
fn numpy_fortran_order_is_reordered() {
    // arange(6).reshape(2, 3) stored column-major; logical order stays row-major.
    let t = read_tensor(&fixture("f32_fortran_2x3.npy")).unwrap();
    assert_eq!(t.shape(), [2, 3]);
    assert_eq!(t.data(), &TensorData::Float32(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
}

#[test]
fn numpy_big_endian() {
    let t = read_tensor(&fixture("f64_big_endian_3.npy")).unwrap();
    assert_eq!(t.data(), &TensorData::Float64(vec![-1.0, 0.25, 1e300]));
}

#[test]
fn numpy_activation_layout() {
    let t = read_tensor(&fixture("f32_activation_4x2x3x5.npy")).unwrap();
    assert_eq!(t.shape(), [4, 2, 3, 5]);
    let expected: Vec<f32> = (0..120).map(|i| i as f32 * 0.5 - 7.0).collect();
    assert_eq!(t.data(), &TensorData::Float32(expected));
}

#[test]
fn numpy_c_order_files_round_trip_bytes() {
    for name in ["f64_zero_onehalf.npy", "f32_2x3_zeros.npy", "i16_2x2x2.npy", "f32_activation_4x2x3x5.npy"] {
        let bytes = fixture(name);
        let t = read_tensor(&bytes).unwrap();
        assert_eq!(write_tensor(&t), bytes, "{name}");
    }
}

#[test]
fn numpy_non_native_files_round_trip_values() {
    for name in ["f32_fortran_2x3.npy", "f64_big_endian_3.npy"] {
        let t = read_tensor(&fixture(name)).unwrap();
        let back = read_tensor(&write_tensor(&t)).unwrap();
        assert!(back.bit_eq(&t), "{name}");
    }
}

#[derive(Deserialize)]
struct Reference {
    affine: [[f64; 4]; 4],
    shape: [usize; 3],
    values_fortran: Vec<f32>,
}

fn assert_matches_reference(v: &Volume, r: &Reference) {
    assert_eq!(v.dims(), r.shape);
    assert_eq!(v.values().len(), r.values_fortran.len());
    for (a, b) in v.values().iter().zip(&r.values_fortran) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
    let [ni, nj, nk] = r.shape;
    for idx in [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [(ni - 1) as f64, (nj - 1) as f64, (nk - 1) as f64]] {
        let p = v.index_to_world(idx);
        for row in 0..3 {
            let a = &r.affine[row];
            let expected = a[0] * idx[0] + a[1] * idx[1] + a[2] * idx[2] + a[3];
            assert!((p[row] - expected).abs() <= 1e-5, "{idx:?} row {row}: {} vs {expected}", p[row]);
        }
    }
}

#[test]
fn nibabel_rotated_anisotropic() {
    let r: Reference = serde_json::from_slice(&fixture("f32_rotated_aniso.json")).unwrap();
    let plain = read_nifti(&fixture("f32_rotated_aniso.nii")).unwrap();
    assert_matches_reference(&plain, &r);
    let gz = read_nifti(&gunzip(&fixture("f32_rotated_aniso.nii.gz"))).unwrap();
    assert_eq!(gz, plain);
    let qform = read_nifti(&fixture("f32_qform_only.nii")).unwrap();
    assert_matches_reference(&qform, &r);
}

#[test]
fn nibabel_int16_files() {
    let v = read_nifti(&fixture("i16_identity_2x2x2.nii")).unwrap();
    assert_eq!(v.dims(), [2, 2, 2]);
    assert_eq!(v.values(), (0..8).map(|x| x as f32).collect::<Vec<_>>());
    assert_eq!(v.voxel(1, 0, 0), 1.0);
    assert_eq!(v.voxel(0, 1, 0), 2.0);
    assert_eq!(v.voxel(0, 0, 1), 4.0);
    assert_eq!(v.index_to_world([1.0, 1.0, 1.0]), Point3::new(1.0, 1.0, 1.0));
    let scaled = read_nifti(&fixture("i16_scaled.nii")).unwrap();
    assert_eq!(scaled.values(), [7.0; 8]);
}

#[test]
fn nifti_fixtures_round_trip() {
    for name in ["f32_rotated_aniso.nii", "f32_qform_only.nii", "i16_identity_2x2x2.nii", "i16_scaled.nii"] {
        let v = read_nifti(&fixture(name)).unwrap();
        let bytes = write_nifti(&v);
        let back = read_nifti(&bytes).unwrap();
        assert_eq!(back.dims(), v.dims(), "{name}");
        assert_eq!(back.values(), v.values(), "{name}");
        assert_eq!(back.intensity_unit, v.intensity_unit, "{name}");
        for idx in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 2.0, 0.0]] {
            let (a, b) = (v.index_to_world(idx), back.index_to_world(idx));
            assert!((a - b).norm() <= 1e-5, "{name}: {a} vs {b}");
        }
    }
}

const MANIFEST: &str = r#"{"sample_id":"a","vertebra_label":"L1","fractured":true,"predicted_prob":0.8,"activation_path":"act/a.npy","patch_path":null,"split":"train"}
{"sample_id":"b","vertebra_label":"T12","fractured":false,"predicted_prob":null,"activation_path":"act/b.npy","patch_path":"p/b.npy","split":"test"}
"#;

fn mutate(mut bytes: Vec<u8>, edits: &[(usize, u8)], cut: usize) -> Vec<u8> {
    if !bytes.is_empty() {
        for &(pos, b) in edits {
            let n = bytes.len();
            bytes[pos % n] = b;
        }
    }
    bytes.truncate(cut.min(bytes.len()));
    bytes
}

fn volume_strategy() -> impl Strategy<Value = Volume> {
    (1usize..5, 1usize..5, 1usize..5, -3.0f64..3.0, 0.1f64..4.0, -100.0f64..100.0).prop_flat_map(|(ni, nj, nk, angle, sp, o)| {
        prop::collection::vec(-2000.0f32..2000.0, ni * nj * nk).prop_map(move |values| {
            let r = nalgebra::Rotation3::from_euler_angles(angle, angle * 0.5, -angle).into_inner();
            Volume::new([ni, nj, nk], values, [sp, sp * 1.5, sp * 0.5], [o, -o, o * 0.25], r, IntensityUnit::Hu).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn npy_reader_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = read_tensor(&bytes);
        let mut prefixed = b"\x93NUMPY\x01\x00".to_vec();
        prefixed.extend_from_slice(&bytes);
        let _ = read_tensor(&prefixed);
    }

    #[test]
    fn mutated_npy_never_panics(edits in prop::collection::vec((0usize..4096, any::<u8>()), 0..6), cut in 0usize..4096) {
        for name in ["f32_activation_4x2x3x5.npy", "f32_fortran_2x3.npy", "f64_big_endian_3.npy"] {
            let _ = read_tensor(&mutate(fixture(name), &edits, cut));
        }
    }

    #[test]
    fn nifti_reader_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..1024)) {
        let _ = read_nifti(&bytes);
    }

    #[test]
    fn mutated_nifti_never_panics(edits in prop::collection::vec((0usize..2048, any::<u8>()), 0..6), cut in 0usize..2048) {
        for name in ["f32_rotated_aniso.nii", "i16_scaled.nii", "f32_qform_only.nii"] {
            let _ = read_nifti(&mutate(fixture(name), &edits, cut));
        }
    }

    #[test]
    fn manifest_parser_never_panics(edits in prop::collection::vec((0usize..1024, any::<u8>()), 0..6), cut in 0usize..1024, junk in ".{0,64}") {
        let bytes = mutate(MANIFEST.as_bytes().to_vec(), &edits, cut);
        let _ = parse_manifest(&String::from_utf8_lossy(&bytes), std::path::Path::new("."));
        let _ = parse_manifest(&junk, std::path::Path::new("."));
    }

    #[test]
    fn tensor_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>(), kind in 0usize..3) {
        let n: usize = shape.iter().product();
        let data = match kind {
            0 => TensorData::Float32((0..n).map(|i| f32::from_bits((seed as u32).wrapping_mul(i as u32 + 1))).collect()),
            1 => TensorData::Float64((0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 7))).collect()),
            _ => TensorData::Int16((0..n).map(|i| (seed as i16).wrapping_mul(i as i16)).collect()),
        };
        let t = Tensor::new(shape.clone(), data).unwrap();
        let bytes = write_tensor(&t);
        prop_assert_eq!(bytes.len() % 64, (n * t.element_type().size()) % 64);
        let back = read_tensor(&bytes).unwrap();
        prop_assert!(back.bit_eq(&t));
        prop_assert_eq!(back.shape(), &shape[..]);
        prop_assert_eq!(write_tensor(&back), bytes);
    }

    #[test]
    fn volume_round_trip(v in volume_strategy()) {
        let back = read_nifti(&write_nifti(&v)).unwrap();
        prop_assert_eq!(back.dims(), v.dims());
        prop_assert_eq!(back.values(), v.values());
        let idx = [v.dims()[0] as f64 - 1.0, 0.5, v.dims()[2] as f64 - 1.0];
        prop_assert!((back.index_to_world(idx) - v.index_to_world(idx)).norm() < 1e-4);
        let m: Matrix3<f64> = back.linear_map() - v.linear_map();
        prop_assert!(m.abs().max() < 1e-5);
    }
}

