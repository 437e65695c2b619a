//! Little-endian binary files for scenes/images (`PEIS`), detection frames
//! (`PEID`) and censor masks (`PEIM`), plus JSON configuration files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{CensorMask, DetectionFrame, InstrumentConfig, Scene};

pub const FORMAT_VERSION: u16 = 1;

/// Largest side length accepted when reading, to bound allocations.
const MAX_SIDE: u32 = 1 << 15;

fn format_error(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format { format, reason: reason.into() }
}

fn write_header<W: Write>(out: &mut W, magic: &[u8; 4], n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Shape(format!("side {n} does not fit in u32")))?;
    out.write_all(magic)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&n.to_le_bytes())?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    format: &'static str,
}

impl<R: Read> Reader<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => format_error(self.format, "truncated file"),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<usize> {
        let got: [u8; 4] = self.bytes()?;
        if &got != magic {
            return Err(format_error(self.format, format!("bad magic {got:?}")));
        }
        let version = u16::from_le_bytes(self.bytes()?);
        if version != FORMAT_VERSION {
            return Err(format_error(self.format, format!("unsupported version {version}")));
        }
        let n = self.u32()?;
        if n == 0 || n > MAX_SIDE {
            return Err(format_error(self.format, format!("implausible side length {n}")));
        }
        Ok(n as usize)
    }

    fn finish(mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        match self.inner.read(&mut rest)? {
            0 => Ok(()),
            _ => Err(format_error(self.format, "trailing bytes")),
        }
    }
}

/// Writes a reflectivity/depth pair.
pub fn write_scene<W: Write>(mut out: W, scene: &Scene<f64>) -> Result<()> {
    write_images(&mut out, &scene.alpha, &scene.depth)
}

/// Writes two square images in the scene layout (reconstructions use this too).
pub fn write_images<W: Write>(mut out: W, first: &Array2<f64>, second: &Array2<f64>) -> Result<()> {
    let (r, c) = first.dim();
    if r != c || second.dim() != (r, c) {
        return Err(Error::Shape(format!("PEIS images must be equal and square: {:?}, {:?}", first.dim(), second.dim())));
    }
    write_header(&mut out, b"PEIS", r)?;
    for v in first.iter().chain(second.iter()) {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the two raw images of a `PEIS` file without scene validation.
pub fn read_images<R: Read>(input: R) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut r = Reader { inner: input, format: "PEIS" };
    let n = r.header(b"PEIS")?;
    let read_image = |r: &mut Reader<R>| -> Result<Array2<f64>> {
        let mut v = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            v.push(r.f64()?);
        }
        Ok(Array2::from_shape_vec((n, n), v).expect("n*n values"))
    };
    let a = read_image(&mut r)?;
    let b = read_image(&mut r)?;
    r.finish()?;
    Ok((a, b))
}

pub fn read_scene<R: Read>(input: R) -> Result<Scene<f64>> {
    let (alpha, depth) = read_images(input)?;
    Scene::new(alpha, depth)
}

pub fn write_frame<W: Write>(mut out: W, frame: &DetectionFrame) -> Result<()> {
    write_header(&mut out, b"PEID", frame.n())?;
    for ts in frame.pixels() {
        out.write_all(&(ts.len() as u32).to_le_bytes())?;
        for t in ts {
            out.write_all(&t.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(input: R) -> Result<DetectionFrame> {
    let mut r = Reader { inner: input, format: "PEID" };
    let n = r.header(b"PEID")?;
    let mut pixels = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let k = r.u32()? as usize;
        let mut ts = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            ts.push(r.f64()?);
        }
        pixels.push(ts);
    }
    r.finish()?;
    DetectionFrame::new(n, pixels)
}

pub fn write_mask<W: Write>(mut out: W, mask: &CensorMask) -> Result<()> {
    write_header(&mut out, b"PEIM", mask.n())?;
    for kept in mask.pixels() {
        out.write_all(&(kept.len() as u32).to_le_bytes())?;
        for l in kept {
            out.write_all(&l.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_mask<R: Read>(input: R) -> Result<CensorMask> {
    let mut r = Reader { inner: input, format: "PEIM" };
    let n = r.header(b"PEIM")?;
    let mut pixels = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let k = r.u32()? as usize;
        let mut kept = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            kept.push(r.u32()?);
        }
        pixels.push(kept);
    }
    r.finish()?;
    CensorMask::new(n, pixels)
}

pub fn save_scene(path: impl AsRef<Path>, scene: &Scene<f64>) -> Result<()> {
    write_scene(BufWriter::new(File::create(path)?), scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene<f64>> {
    read_scene(BufReader::new(File::open(path)?))
}

pub fn save_images(path: impl AsRef<Path>, first: &Array2<f64>, second: &Array2<f64>) -> Result<()> {
    write_images(BufWriter::new(File::create(path)?), first, second)
}

pub fn load_images(path: impl AsRef<Path>) -> Result<(Array2<f64>, Array2<f64>)> {
    read_images(BufReader::new(File::open(path)?))
}

pub fn save_frame(path: impl AsRef<Path>, frame: &DetectionFrame) -> Result<()> {
    write_frame(BufWriter::new(File::create(path)?), frame)
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<DetectionFrame> {
    read_frame(BufReader::new(File::open(path)?))
}

pub fn save_mask(path: impl AsRef<Path>, mask: &CensorMask) -> Result<()> {
    write_mask(BufWriter::new(File::create(path)?), mask)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<CensorMask> {
    read_mask(BufReader::new(File::open(path)?))
}

/// Reads and validates a JSON configuration.
pub fn load_config(path: impl AsRef<Path>) -> Result<InstrumentConfig<f64>> {
    let cfg: InstrumentConfig<f64> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(path: impl AsRef<Path>, cfg: &InstrumentConfig<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, cfg)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scene_layout_is_exact() {
        let scene = Scene::new(Array2::from_elem((2, 2), 0.5), Array2::from_elem((2, 2), 3.0)).unwrap();
        let mut buf = Vec::new();
        write_scene(&mut buf, &scene).unwrap();
        assert_eq!(&buf[..4], b"PEIS");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[2, 0, 0, 0]);
        assert_eq!(buf.len(), 10 + 8 * 8);
        assert_eq!(&buf[10..18], &0.5f64.to_le_bytes());
        assert_eq!(&buf[42..50], &3.0f64.to_le_bytes());
        assert_eq!(read_scene(&buf[..]).unwrap(), scene);
    }

    #[test]
    fn rejects_corrupt_input() {
        let scene = Scene::new(Array2::from_elem((2, 2), 0.5), Array2::from_elem((2, 2), 3.0)).unwrap();
        let mut buf = Vec::new();
        write_scene(&mut buf, &scene).unwrap();
        assert!(matches!(read_scene(&buf[..buf.len() - 1]), Err(Error::Format { .. })));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_scene(&bad[..]), Err(Error::Format { .. })));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_scene(&bad[..]), Err(Error::Format { .. })));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_scene(&long[..]), Err(Error::Format { .. })));
        assert!(matches!(read_frame(&buf[..]), Err(Error::Format { .. })));
    }

    #[test]
    fn frame_layout() {
        let frame = DetectionFrame::new(1, vec![vec![1e-9, 2e-9]]).unwrap();
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        assert_eq!(&buf[..4], b"PEID");
        assert_eq!(&buf[10..14], &[2, 0, 0, 0]);
        assert_eq!(buf.len(), 14 + 16);
        assert_eq!(read_frame(&buf[..]).unwrap(), frame);
    }

    #[test]
    fn config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let cfg = InstrumentConfig {
            eta: 0.35,
            signal: 0.004,
            background: 6e-4,
            pulses: 1000,
            period: 100e-9,
            pulse_width: 270e-12,
            delta: 8e-12,
            c: 2.998e8,
        };
        save_config(&path, &cfg).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
        std::fs::write(&path, r#"{"eta":0.35,"S":1,"B":0,"N":10,"T_r":1e-7,"T_p":2.7e-10,"delta":8e-12}"#).unwrap();
        assert!(load_config(&path).is_err());
    }

    proptest! {
        #[test]
        fn frame_and_mask_round_trip(n in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pixels: Vec<Vec<f64>> = (0..n * n)
                .map(|_| (0..rng.random_range(0..4)).map(|_| rng.random::<f64>() * 1e-7).collect())
                .collect();
            let kept: Vec<Vec<u32>> = pixels.iter().map(|p| (0..p.len() as u32).filter(|_| rng.random::<bool>()).collect()).collect();
            let frame = DetectionFrame::new(n, pixels).unwrap();
            let mask = CensorMask::new(n, kept).unwrap();
            let mut a = Vec::new();
            write_frame(&mut a, &frame).unwrap();
            prop_assert_eq!(read_frame(&a[..]).unwrap(), frame);
            let mut b = Vec::new();
            write_mask(&mut b, &mask).unwrap();
            prop_assert_eq!(read_mask(&b[..]).unwrap(), mask);
        }

        #[test]
        fn images_bit_exact(vals in proptest::collection::vec(proptest::num::f64::ANY, 9)) {
            let a = Array2::from_shape_vec((3, 3), vals.clone()).unwrap();
            let mut buf = Vec::new();
            write_images(&mut buf, &a, &a).unwrap();
            let (x, _) = read_images(&buf[..]).unwrap();
            for (p, q) in x.iter().zip(a.iter()) {
                prop_assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }
}
