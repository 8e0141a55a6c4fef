//! `gen-gt`: annotation file to HMK1 landmark and boundary stacks.

use std::path::{Path, PathBuf};

use log::{error, info};
use propnet::codec::{encode_landmarks, rasterize_boundaries, BoundaryScheme, GaussianParams, GridMapping};
use propnet::geometry::{crop_resize, parse_record, record_lines, Attributes, LandmarkSet, NUM_ATTRIBUTES};
use propnet::tensor::{read_stack, write_stack, HeatmapStack};

use crate::{ensure_dir, read_text, write_file, CliError, CliResult};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone)]
pub struct GenGtConfig {
    pub n_points: usize,
    pub input_size: usize,
    pub grid: usize,
    pub margin: f64,
    pub gaussian: GaussianParams,
}

impl Default for GenGtConfig {
    fn default() -> Self {
        GenGtConfig {
            n_points: propnet::geometry::WFLW_POINTS,
            input_size: 256,
            grid: 64,
            margin: 0.0,
            gaussian: GaussianParams::default(),
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub image_id: String,
    pub attributes: Attributes,
    pub landmarks: String,
    pub boundaries: String,
}

impl ManifestEntry {
    fn to_line(&self) -> String {
        let bits: String = self.attributes.bits().iter().map(|b| char::from(b'0' + b)).collect();
        format!("{}\t{}\t{}\t{}\t{}", self.index, self.image_id, bits, self.landmarks, self.boundaries)
    }

    fn parse(line: &str) -> CliResult<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(CliError::Input(format!("manifest line has {} fields, expected 5", f.len())));
        }
        let index = f[0].parse().map_err(|_| CliError::Input(format!("bad manifest index {:?}", f[0])))?;
        let mut attributes = Attributes::default();
        let bits = f[2].as_bytes();
        if bits.len() != NUM_ATTRIBUTES || bits.iter().any(|b| *b != b'0' && *b != b'1') {
            return Err(CliError::Input(format!("bad attribute bits {:?}", f[2])));
        }
        for (c, b) in bits.iter().enumerate() {
            attributes.0[c] = *b == b'1';
        }
        Ok(ManifestEntry {
            index,
            image_id: f[1].to_string(),
            attributes,
            landmarks: f[3].to_string(),
            boundaries: f[4].to_string(),
        })
    }
}

/// Ground-truth stacks for one cropped sample.
pub fn render_sample(sample: &LandmarkSet, scheme: &BoundaryScheme, cfg: &GenGtConfig) -> CliResult<(HeatmapStack, HeatmapStack)> {
    let (_, cropped) = crop_resize(sample, cfg.input_size, cfg.margin)?;
    let mapping = GridMapping::new(cfg.input_size, cfg.grid, cfg.grid)?;
    let lm = encode_landmarks(&cropped, &mapping, &cfg.gaussian)?;
    let bd = rasterize_boundaries(&cropped, scheme, &mapping, &cfg.gaussian)?;
    Ok((lm, bd))
}

/// Writes stacks for every record and a manifest. Records that fail are
/// logged and skipped; the command then fails after writing the rest.
pub fn run(annotations: &Path, scheme: &BoundaryScheme, out_dir: &Path, cfg: &GenGtConfig) -> CliResult<String> {
    let text = read_text(annotations)?;
    let lines: Vec<(usize, &str)> = record_lines(&text).collect();
    if lines.is_empty() {
        return Err(CliError::Input(format!("{}: no records", annotations.display())));
    }
    ensure_dir(out_dir)?;
    let mut entries = Vec::new();
    let mut failed = 0usize;
    for (index, (line_no, line)) in lines.into_iter().enumerate() {
        let result = parse_record(line, cfg.n_points)
            .map_err(CliError::from)
            .and_then(|s| render_sample(&s, scheme, cfg).map(|maps| (s, maps)));
        let (sample, (lm, bd)) = match result {
            Ok(v) => v,
            Err(e) => {
                error!("line {line_no}: {e}");
                failed += 1;
                continue;
            }
        };
        let entry = ManifestEntry {
            index,
            image_id: sample.image_id.clone(),
            attributes: sample.attributes,
            landmarks: format!("sample_{index:05}_landmarks.hmk"),
            boundaries: format!("sample_{index:05}_boundaries.hmk"),
        };
        write_stack(&lm, &out_dir.join(&entry.landmarks))?;
        write_stack(&bd, &out_dir.join(&entry.boundaries))?;
        entries.push(entry);
    }
    let mut manifest = String::from("# index\timage_id\tattributes\tlandmarks\tboundaries\n");
    for e in &entries {
        manifest.push_str(&e.to_line());
        manifest.push('\n');
    }
    write_file(&out_dir.join(MANIFEST), &manifest)?;
    info!("wrote {} samples to {}", entries.len(), out_dir.display());
    if failed > 0 {
        return Err(CliError::Input(format!("{failed} record(s) failed")));
    }
    Ok(format!("samples\t{}\nmanifest\t{}\n", entries.len(), out_dir.join(MANIFEST).display()))
}

/// Reads a manifest and the stacks it lists.
pub fn load(dir: &Path) -> CliResult<Vec<(ManifestEntry, HeatmapStack, HeatmapStack)>> {
    let path: PathBuf = dir.join(MANIFEST);
    let text = read_text(&path)?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let entry = ManifestEntry::parse(line).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        let lm = read_stack(&dir.join(&entry.landmarks))?;
        let bd = read_stack(&dir.join(&entry.boundaries))?;
        out.push((entry, lm, bd));
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("{}: no records", path.display())));
    }
    Ok(out)
}
