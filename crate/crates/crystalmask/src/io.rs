//! Instance-set and region JSON files, and 8-bit grayscale PNG images.
//!
//! Instance set:
//! `{"width":W,"height":H,"instances":[{"id":1,"rle":[...],"class":"single","confidence":"high","score":0.93}]}`
//! with `score` optional (default 1.0) and an optional `source_image` path.
//! Regions: `{"regions":[{"polygon":[[x,y],...]}]}`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crystalmask_core::mask::encode_rle;
use crystalmask_core::{decode_rle, ClassLabel, CoarseRegion, Confidence, GrayImage, Instance, InstanceSet};
use image::{ImageBuffer, ImageEncoder, Luma};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Reject unknown object keys.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_json(text: &str, path: &Path) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

struct Fields<'a> {
    path: &'a Path,
    context: String,
    map: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn new(value: &'a Value, path: &'a Path, context: impl Into<String>, allowed: &[&str], opts: LoadOptions) -> Result<Self> {
        let context = context.into();
        let map = value
            .as_object()
            .ok_or_else(|| Error::schema(path, format!("{context}: expected an object")))?;
        if opts.strict {
            if let Some(key) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(Error::schema(path, format!("{context}: unknown field `{key}`")));
            }
        }
        Ok(Self { path, context, map })
    }

    fn err(&self, message: impl std::fmt::Display) -> Error {
        Error::schema(self.path, format!("{}: {message}", self.context))
    }

    fn required(&self, key: &str) -> Result<&'a Value> {
        self.map.get(key).ok_or_else(|| self.err(format!("missing field `{key}`")))
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.required(key)?
            .as_u64()
            .ok_or_else(|| self.err(format!("`{key}` must be a non-negative integer")))
    }

    fn dimension(&self, key: &str) -> Result<usize> {
        match self.u64(key)? {
            0 => Err(self.err(format!("`{key}` must be at least 1"))),
            v => usize::try_from(v).map_err(|_| self.err(format!("`{key}` is too large"))),
        }
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        self.required(key)?
            .as_str()
            .ok_or_else(|| self.err(format!("`{key}` must be a string")))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>> {
        self.required(key)?
            .as_array()
            .ok_or_else(|| self.err(format!("`{key}` must be an array")))
    }
}

pub fn parse_instance_set(text: &str, path: &Path, opts: LoadOptions) -> Result<InstanceSet> {
    let root = parse_json(text, path)?;
    let top = Fields::new(&root, path, "instance set", &["width", "height", "instances", "source_image"], opts)?;
    let width = top.dimension("width")?;
    let height = top.dimension("height")?;
    let source_image = match top.map.get("source_image") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(top.err("`source_image` must be a string")),
    };

    let mut instances = Vec::new();
    for (k, item) in top.array("instances")?.iter().enumerate() {
        let f = Fields::new(
            item,
            path,
            format!("instances[{k}]"),
            &["id", "rle", "class", "confidence", "score"],
            opts,
        )?;
        let id = f.u64("id")?;
        let runs = f
            .array("rle")?
            .iter()
            .map(|v| v.as_u64().ok_or_else(|| f.err("`rle` must hold non-negative integers")))
            .collect::<Result<Vec<u64>>>()?;
        let mask = decode_rle(&runs, width, height).map_err(|source| Error::Data {
            path: path.to_path_buf(),
            source,
        })?;
        let class = ClassLabel::parse(f.str("class")?).ok_or_else(|| f.err("`class` must be single, agglomerated or unlabeled"))?;
        let confidence = Confidence::parse(f.str("confidence")?).ok_or_else(|| f.err("`confidence` must be high, low or none"))?;
        let score = match f.map.get("score") {
            None => 1.0,
            Some(v) => v
                .as_f64()
                .filter(|s| (0.0..=1.0).contains(s))
                .ok_or_else(|| f.err("`score` must be a number in [0, 1]"))?,
        };
        instances.push(
            Instance::new(id, mask)
                .with_class(class)
                .with_confidence(confidence)
                .with_score(score),
        );
    }
    let set = InstanceSet::new(width, height, instances).map_err(|e| Error::schema(path, e.to_string()))?;
    Ok(set.with_source_image(source_image))
}

pub fn load_instance_set(path: &Path, opts: LoadOptions) -> Result<InstanceSet> {
    parse_instance_set(&read_text(path)?, path, opts)
}

#[derive(Serialize)]
struct InstanceRecord<'a> {
    id: u64,
    rle: Vec<u64>,
    class: &'a str,
    confidence: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct InstanceSetRecord<'a> {
    width: usize,
    height: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_image: Option<&'a str>,
    instances: Vec<InstanceRecord<'a>>,
}

/// Compact JSON with a fixed key order and a trailing newline.
pub fn instance_set_to_json(set: &InstanceSet) -> String {
    let record = InstanceSetRecord {
        width: set.width(),
        height: set.height(),
        source_image: set.source_image(),
        instances: set
            .instances()
            .iter()
            .map(|i| InstanceRecord {
                id: i.id,
                rle: encode_rle(&i.mask),
                class: i.class.as_str(),
                confidence: i.confidence.as_str(),
                score: i.score,
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&record).expect("instance sets always serialize");
    text.push('\n');
    text
}

pub fn save_instance_set(set: &InstanceSet, path: &Path) -> Result<()> {
    write_atomic(path, instance_set_to_json(set).as_bytes())
}

pub fn parse_regions(text: &str, path: &Path, opts: LoadOptions) -> Result<Vec<CoarseRegion>> {
    let root = parse_json(text, path)?;
    let top = Fields::new(&root, path, "regions file", &["regions"], opts)?;
    let mut regions = Vec::new();
    for (k, item) in top.array("regions")?.iter().enumerate() {
        let f = Fields::new(item, path, format!("regions[{k}]"), &["polygon"], opts)?;
        let polygon = f
            .array("polygon")?
            .iter()
            .map(|p| match p.as_array().map(Vec::as_slice) {
                Some([x, y]) => x
                    .as_f64()
                    .zip(y.as_f64())
                    .ok_or_else(|| f.err("vertex coordinates must be numbers")),
                _ => Err(f.err("vertices must be [x, y] pairs")),
            })
            .collect::<Result<Vec<_>>>()?;
        regions.push(CoarseRegion::new(polygon).map_err(|e| f.err(e))?);
    }
    Ok(regions)
}

pub fn load_regions(path: &Path, opts: LoadOptions) -> Result<Vec<CoarseRegion>> {
    parse_regions(&read_text(path)?, path, opts)
}

#[derive(Serialize)]
struct RegionRecord {
    polygon: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct RegionsRecord {
    regions: Vec<RegionRecord>,
}

pub fn regions_to_json(regions: &[CoarseRegion]) -> String {
    let record = RegionsRecord {
        regions: regions
            .iter()
            .map(|r| RegionRecord {
                polygon: r.polygon().iter().map(|&(x, y)| [x, y]).collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&record).expect("regions always serialize");
    text.push('\n');
    text
}

pub fn save_regions(regions: &[CoarseRegion], path: &Path) -> Result<()> {
    write_atomic(path, regions_to_json(regions).as_bytes())
}

/// Reads an 8-bit grayscale PNG. Other pixel formats are rejected.
pub fn load_png(path: &Path) -> Result<GrayImage> {
    let img_err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| img_err(e.to_string()))?;
    let image::DynamicImage::ImageLuma8(buf) = decoded else {
        return Err(img_err(format!("expected 8-bit grayscale, found {:?}", decoded.color())));
    };
    let (w, h) = buf.dimensions();
    GrayImage::new(w as usize, h as usize, buf.into_raw()).map_err(|source| Error::Data {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_png(image: &GrayImage) -> Vec<u8> {
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(
            image.data(),
            image.width() as u32,
            image.height() as u32,
            image::ExtendedColorType::L8,
        )
        .expect("writing PNG to memory cannot fail");
    bytes
}

pub fn save_png(image: &GrayImage, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let buf: ImageBuffer<Luma<u8>, &[u8]> = ImageBuffer::from_raw(image.width() as u32, image.height() as u32, image.data())
        .expect("buffer length matches dimensions");
    image::codecs::png::PngEncoder::new(BufWriter::new(file))
        .write_image(buf.as_raw(), buf.width(), buf.height(), image::ExtendedColorType::L8)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crystalmask_core::BinaryMask;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("test.json")
    }

    fn two_instance_set() -> InstanceSet {
        InstanceSet::new(
            4,
            3,
            vec![
                Instance::new(1, BinaryMask::from_fn(4, 3, |x, y| x < 2 && y < 2))
                    .with_class(ClassLabel::Single)
                    .with_confidence(Confidence::High)
                    .with_score(0.93),
                Instance::new(2, BinaryMask::from_fn(4, 3, |x, _| x == 3)).with_class(ClassLabel::Agglomerated),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_two_instances() {
        let set = two_instance_set();
        let text = instance_set_to_json(&set);
        assert_eq!(
            text,
            "{\"width\":4,\"height\":3,\"instances\":[\
             {\"id\":1,\"rle\":[0,2,2,2,6],\"class\":\"single\",\"confidence\":\"high\",\"score\":0.93},\
             {\"id\":2,\"rle\":[3,1,3,1,3,1],\"class\":\"agglomerated\",\"confidence\":\"none\",\"score\":1.0}]}\n"
        );
        assert_eq!(parse_instance_set(&text, &p(), LoadOptions::default()).unwrap(), set);
    }

    #[test]
    fn score_defaults_to_one() {
        let text = r#"{"width":2,"height":1,"instances":[{"id":4,"rle":[1,1],"class":"single","confidence":"low"}]}"#;
        let set = parse_instance_set(text, &p(), LoadOptions::default()).unwrap();
        assert_eq!(set.instances()[0].score, 1.0);
        assert_eq!(set.instances()[0].confidence, Confidence::Low);
    }

    #[test]
    fn bad_run_sum() {
        let text = r#"{"width":2,"height":2,"instances":[{"id":1,"rle":[1,2],"class":"single","confidence":"high"}]}"#;
        let err = parse_instance_set(text, &p(), LoadOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Data {
                source: crystalmask_core::Error::SumMismatch { expected: 4, actual: 3 },
                ..
            }
        ));
    }

    #[test]
    fn duplicate_ids_are_schema_errors() {
        let text = r#"{"width":2,"height":1,"instances":[
            {"id":1,"rle":[1,1],"class":"single","confidence":"high"},
            {"id":1,"rle":[0,1,1],"class":"single","confidence":"high"}]}"#;
        assert!(matches!(
            parse_instance_set(text, &p(), LoadOptions::default()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn strictness() {
        let text = r#"{"width":2,"height":1,"extra":true,"instances":[{"id":1,"rle":[1,1],"class":"single","confidence":"high","note":"x"}]}"#;
        let err = parse_instance_set(text, &p(), LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("unknown field `extra`"), "{err}");
        let lenient = parse_instance_set(text, &p(), LoadOptions { strict: false }).unwrap();
        assert_eq!(lenient.len(), 1);
    }

    #[test]
    fn schema_errors() {
        let cases = [
            r#"[]"#,
            r#"{"width":2,"instances":[]}"#,
            r#"{"width":0,"height":1,"instances":[]}"#,
            r#"{"width":2,"height":1,"instances":[{"id":1,"rle":[1,1],"class":"big","confidence":"high"}]}"#,
            r#"{"width":2,"height":1,"instances":[{"id":1,"rle":[1,1],"class":"single"}]}"#,
            r#"{"width":2,"height":1,"instances":[{"id":1,"rle":[1,1],"class":"single","confidence":"high","score":1.5}]}"#,
            r#"{"width":2,"height":1,"instances":[{"id":-1,"rle":[1,1],"class":"single","confidence":"high"}]}"#,
            r#"{"width":2,"height":1,"instances":[{"id":1,"rle":[2],"class":"single","confidence":"high"}]}"#,
        ];
        for text in cases {
            let err = parse_instance_set(text, &p(), LoadOptions::default()).unwrap_err();
            assert!(matches!(err, Error::Schema { .. }), "{text}: {err:?}");
        }
        assert!(matches!(
            parse_instance_set("{not json", &p(), LoadOptions::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn regions_round_trip() {
        let text = r#"{"regions":[{"polygon":[[0,0],[2.5,0],[2,2]]}]}"#;
        let regions = parse_regions(text, &p(), LoadOptions::default()).unwrap();
        assert_eq!(regions[0].polygon(), &[(0.0, 0.0), (2.5, 0.0), (2.0, 2.0)]);
        let again = parse_regions(&regions_to_json(&regions), &p(), LoadOptions::default()).unwrap();
        assert_eq!(again, regions);
        let short = r#"{"regions":[{"polygon":[[0,0],[1,1]]}]}"#;
        assert!(matches!(parse_regions(short, &p(), LoadOptions::default()), Err(Error::Schema { .. })));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 30 + y) as u8).unwrap();
        save_png(&img, &path).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
        assert_eq!(std::fs::read(&path).unwrap(), encode_png(&img));
    }
}
