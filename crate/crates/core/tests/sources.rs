use image::{Rgb, RgbImage};
use sbd_core::frames::write_y4m;
use sbd_core::{open_frame_source, FrameSource, Fps, Y4mSource};

#[test]
fn long_y4m_counts_frames_without_decoding() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("long.y4m");
    let frames: Vec<RgbImage> = (0..102_400u32).map(|i| RgbImage::from_pixel(2, 2, Rgb([(i % 251) as u8, 0, 0]))).collect();
    write_y4m(&path, &frames, Fps::new(25, 1)).unwrap();
    drop(frames);

    let source = Y4mSource::open(&path).unwrap();
    assert_eq!(source.frame_count(), 102_400);
    assert!((source.duration_secs() - 4096.0).abs() < 1e-9);
    assert_eq!(source.dimensions(), (2, 2));

    let last = source.frame(102_399).unwrap();
    let first = source.frame(0).unwrap();
    assert!(last.get_pixel(0, 0)[0].abs_diff((102_399 % 251) as u8) <= 2);
    assert!(first.get_pixel(1, 1)[0] <= 2);
    assert!(source.frame(102_400).is_err());
}

#[test]
fn uri_dispatch_opens_y4m_and_image_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let frames = vec![RgbImage::from_pixel(8, 6, Rgb([40, 90, 200])); 5];
    let y4m = dir.path().join("a.y4m");
    write_y4m(&y4m, &frames, Fps::default()).unwrap();
    let imgs = dir.path().join("frames");
    sbd_core::frames::write_image_dir(&imgs, &frames).unwrap();

    for uri in [y4m.to_str().unwrap(), imgs.to_str().unwrap()] {
        let s = open_frame_source(uri).unwrap();
        assert_eq!(s.frame_count(), 5);
        assert_eq!(s.dimensions(), (8, 6));
        assert_eq!(s.frame(4).unwrap().dimensions(), (8, 6));
    }
    assert!(open_frame_source(dir.path().join("missing.y4m").to_str().unwrap()).is_err());
}
