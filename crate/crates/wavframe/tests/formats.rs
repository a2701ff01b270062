use wavframe::checkpoint::Checkpoint;
use wavframe::format::{decode_pgm, encode_pgm, TensorFile, PGM_MAXVAL};
use wavframe::Error;
use wavframe_core::directional::TransformConfig;
use wavframe_core::wavresnet::{ArchConfig, Network, TrainState};
use wavframe_core::{Image, SubbandStack};

fn ramp(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |r, c| (r as f64 * 0.37 - c as f64 * 0.11).sin())
}

fn tiny_net() -> Network {
    let arch = ArchConfig {
        in_bands: 3,
        channels: 2,
        module_count: 1,
        convs_per_module: 2,
        kernel: 3,
        patch: (5, 5),
        input_scale: 4.0,
    };
    Network::init(arch, 17).unwrap()
}

#[test]
fn tensor_files_round_trip_images_and_stacks() {
    let img = ramp(5, 7);
    let back = TensorFile::decode(&TensorFile::from_image(&img).encode())
        .unwrap()
        .to_image()
        .unwrap();
    assert_eq!(back, img);

    let stack = SubbandStack::new(vec![ramp(4, 6), ramp(4, 6).scale(-2.0)]).unwrap();
    let file = TensorFile::from_stack(&stack);
    assert_eq!(file.dims, vec![2, 4, 6]);
    assert_eq!(
        TensorFile::decode(&file.encode())
            .unwrap()
            .to_stack()
            .unwrap(),
        stack
    );
}

#[test]
fn malformed_tensor_files_are_rejected() {
    let bytes = TensorFile::from_image(&ramp(3, 3)).encode();
    assert!(TensorFile::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(TensorFile::decode(&bad).is_err());
    let mut future = bytes;
    future[8] = 9;
    assert!(TensorFile::decode(&future).is_err());
    assert!(TensorFile::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn pgm_round_trip_is_within_one_quantization_step() {
    let img = ramp(6, 9);
    let bytes = encode_pgm(&img, -1.0, 1.0).unwrap();
    assert!(bytes.starts_with(b"P5\n9 6\n65535\n"));
    let back = decode_pgm(&bytes, -1.0, 1.0).unwrap();
    let step = 2.0 / PGM_MAXVAL as f64;
    let worst = img
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= step / 2.0 + 1e-15, "{worst}");
}

#[test]
fn pgm_clamps_and_reads_eight_bit_files() {
    let img = Image::new(1, 3, vec![-5.0, 0.5, 5.0]).unwrap();
    let back = decode_pgm(&encode_pgm(&img, 0.0, 1.0).unwrap(), 0.0, 1.0).unwrap();
    assert_eq!(back.data()[0], 0.0);
    assert_eq!(back.data()[2], 1.0);

    let mut eight = b"P5\n# comment\n2 1\n255\n".to_vec();
    eight.extend_from_slice(&[0, 255]);
    assert_eq!(decode_pgm(&eight, 0.0, 2.0).unwrap().data(), &[0.0, 2.0]);
    assert!(encode_pgm(&img, 1.0, 1.0).is_err());
}

#[test]
fn checkpoints_round_trip_after_quantization() {
    let net = tiny_net();
    let velocity: Vec<f64> = (0..net.params().len()).map(|i| 1e-3 * i as f64).collect();
    let mut ck = Checkpoint {
        net,
        transform: TransformConfig::fifteen_band(),
        state: Some(TrainState { step: 42, velocity }),
    };
    ck.quantize();
    let back = Checkpoint::decode(&ck.encode().unwrap(), "mem".as_ref()).unwrap();
    assert_eq!(back, ck);

    let inference = Checkpoint { state: None, ..ck };
    let back = Checkpoint::decode(&inference.encode().unwrap(), "mem".as_ref()).unwrap();
    assert_eq!(back, inference);
}

#[test]
fn checksum_catches_a_flipped_byte() {
    let ck = Checkpoint {
        net: tiny_net(),
        transform: TransformConfig::fifteen_band(),
        state: None,
    };
    let mut bytes = ck.encode().unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(
        Checkpoint::decode(&bytes, "mem".as_ref()),
        Err(Error::Checksum(_))
    ));
    assert!(matches!(
        Checkpoint::decode(b"not a checkpoint at all, clearly", "mem".as_ref()),
        Err(Error::Format(_))
    ));
}
