use fefet_core::network::{Dataset, Split};
use fefet_sim::config::hex_digest;
use fefet_sim::data::{default_mnist_dir, load_mnist, read_idx};

fn first_image_bytes(d: &Dataset) -> Vec<u8> {
    d.image(0).iter().map(|&x| (x * 255.0).round() as u8).collect()
}

fn check(split: Split, count: usize, pixel_sum: u32, digest_prefix: &str, labels: [u8; 10]) {
    let d = load_mnist(&default_mnist_dir(), split).unwrap();
    assert_eq!(d.len(), count);
    assert_eq!((d.rows, d.cols), (28, 28));
    let img = first_image_bytes(&d);
    assert_eq!(img.iter().map(|&b| b as u32).sum::<u32>(), pixel_sum);
    assert!(hex_digest(&img).starts_with(digest_prefix));
    assert_eq!(&d.labels[..10], &labels);
    assert!(d.images.iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn training_split_checksums() {
    check(Split::Train, 60_000, 27_525, "23ceaef5eb61f0e7", [5, 0, 4, 1, 9, 2, 1, 3, 1, 4]);
}

#[test]
fn test_split_checksums() {
    check(Split::Test, 10_000, 18_454, "8f6a418c9a639f9e", [7, 2, 1, 0, 4, 1, 4, 9, 5, 9]);
}

#[test]
fn gzip_and_plain_files_read_the_same() {
    let src = default_mnist_dir();
    let gz = read_idx(&src, "t10k-labels-idx1-ubyte").unwrap();
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("mnist_plain");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), &gz).unwrap();
    assert_eq!(read_idx(&dir, "t10k-labels-idx1-ubyte").unwrap(), gz);
    assert!(read_idx(&dir, "t10k-images-idx3-ubyte").is_err());
}
