//! Dataset handling: manifests, ROI series files, per-ROI standardization,
//! random-crop training samples, sliding inference windows, and a synthetic
//! generator with class-dependent connectivity for desk-scale experiments.
//!
//! File formats (UTF-8, LF):
//! - manifest: comma-separated with header `subject_id,label,site,series_path`;
//!   `series_path` is resolved relative to the manifest's directory.
//! - series: comma-separated numeric matrix, rows = time points, columns =
//!   ROIs, with an optional header row of column names.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::matrix::{pearson, Matrix};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// 1 = case, 0 = control.
    pub label: u8,
    pub site: String,
    pub series_path: PathBuf,
}

/// A subject's ROI×time matrix (rows = time points).
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSeries {
    pub values: Matrix,
    pub standardized: bool,
}

impl RoiSeries {
    pub fn t_full(&self) -> usize {
        self.values.rows()
    }

    pub fn num_rois(&self) -> usize {
        self.values.cols()
    }
}

/// One training sample: a contiguous window with its subject's identity.
#[derive(Debug, Clone)]
pub struct CropSample {
    pub window: Matrix,
    pub subject_id: String,
    pub label: u8,
}

/// A manifest record together with its loaded, standardized series.
#[derive(Debug, Clone)]
pub struct LoadedSubject {
    pub record: SubjectRecord,
    pub series: RoiSeries,
}

pub const MANIFEST_HEADER: &str = "subject_id,label,site,series_path";

// ── Loading ────────────────────────────────────────────────────────────

pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Data(format!(
                "manifest {} has header `{}`, expected `{MANIFEST_HEADER}`",
                path.display(),
                header.trim_end()
            )))
        }
        None => return Err(Error::Data(format!("manifest {} is empty", path.display()))),
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "manifest {} row {}: expected 4 fields, got {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let label: u8 = match fields[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Data(format!(
                    "manifest {} row {}: label `{other}` outside {{0,1}}",
                    path.display(),
                    i + 1
                )))
            }
        };
        let id = fields[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!(
                "manifest {}: duplicate subject_id `{id}`",
                path.display()
            )));
        }
        records.push(SubjectRecord {
            subject_id: id,
            label,
            site: fields[2].trim().to_string(),
            series_path: PathBuf::from(fields[3].trim()),
        });
    }
    Ok(records)
}

pub fn load_series(path: &Path, expected_r: Option<usize>) -> Result<RoiSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut cols: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            // A non-numeric first row is a header; anywhere else it's an error.
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Data(format!(
                    "series {} row {}: non-numeric cell",
                    path.display(),
                    i + 1
                )))
            }
        };
        if let Some(c) = cols {
            if row.len() != c {
                return Err(Error::Data(format!(
                    "series {} row {}: {} columns, expected {c}",
                    path.display(),
                    i + 1,
                    row.len()
                )));
            }
        } else {
            cols = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("series {} has no data rows", path.display())));
    }
    if let Some(r) = expected_r {
        if cols != Some(r) {
            return Err(Error::Data(format!(
                "series {}: {} columns, expected {r}",
                path.display(),
                cols.unwrap_or(0)
            )));
        }
    }
    Ok(RoiSeries { values: Matrix::from_rows(&rows)?, standardized: false })
}

/// Load every subject in a manifest and standardize the series. Relative
/// series paths resolve against the manifest directory.
pub fn load_dataset(manifest: &Path, expected_r: Option<usize>) -> Result<Vec<LoadedSubject>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for record in load_manifest(manifest)? {
        let path = if record.series_path.is_absolute() {
            record.series_path.clone()
        } else {
            base.join(&record.series_path)
        };
        let series = standardize(&load_series(&path, expected_r)?);
        out.push(LoadedSubject { record, series });
    }
    Ok(out)
}

// ── Standardization ────────────────────────────────────────────────────

/// Per-ROI z-scoring over the subject's full series with the sample standard
/// deviation. Constant columns map to all zeros.
pub fn standardize(series: &RoiSeries) -> RoiSeries {
    let m = &series.values;
    let (t, r) = (m.rows(), m.cols());
    let mut out = m.clone();
    for c in 0..r {
        let mean = (0..t).map(|i| m.get(i, c)).sum::<f64>() / t as f64;
        let var = if t > 1 {
            (0..t).map(|i| (m.get(i, c) - mean).powi(2)).sum::<f64>() / (t - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        for i in 0..t {
            let z = if sd == 0.0 { 0.0 } else { (m.get(i, c) - mean) / sd };
            out.set(i, c, z);
        }
    }
    RoiSeries { values: out, standardized: true }
}

// ── Sampling ───────────────────────────────────────────────────────────

/// `n` random contiguous windows; start offsets uniform over the valid
/// range, duplicates allowed.
pub fn random_crops(
    subject: &LoadedSubject,
    n: usize,
    window: usize,
    rng: &mut Rng,
) -> Result<Vec<CropSample>> {
    let t_full = subject.series.t_full();
    if t_full < window {
        return Err(Error::Data(format!(
            "subject {} too short: {t_full} time points < window {window}",
            subject.record.subject_id
        )));
    }
    let span = t_full - window + 1;
    Ok((0..n)
        .map(|_| {
            let start = rng.gen_range(span);
            CropSample {
                window: subject.series.values.row_block(start, window),
                subject_id: subject.record.subject_id.clone(),
                label: subject.record.label,
            }
        })
        .collect())
}

/// Windows at offsets 0, stride, 2·stride, …, plus a final window ending at
/// `t_full` when the strided ones stop short.
pub fn sliding_windows(series: &RoiSeries, window: usize, stride: usize) -> Result<Vec<Matrix>> {
    if stride == 0 {
        return Err(Error::Param("sliding window stride must be >= 1".into()));
    }
    let t_full = series.t_full();
    if t_full < window {
        return Err(Error::Data(format!(
            "series too short: {t_full} time points < window {window}"
        )));
    }
    let last = t_full - window;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if *offsets.last().unwrap() != last {
        offsets.push(last);
    }
    Ok(offsets.into_iter().map(|o| series.values.row_block(o, window)).collect())
}

// ── Synthetic data ─────────────────────────────────────────────────────

/// Synthetic AR(1) cohort with class-dependent connectivity: within-block
/// correlation is `corr_strong` for block one in class 1 and `corr_weak` in
/// class 0 (block two reversed), so the classes differ only in their
/// correlation structure, not in per-ROI statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub num_rois: usize,
    pub t_full: usize,
    /// Fraction of subjects labelled 1.
    pub class_balance: f64,
    /// AR(1) coefficient of factors and per-ROI noise.
    pub ar_coeff: f64,
    /// ROIs per correlated block; blocks occupy the first 2*block_size ROIs.
    pub block_size: usize,
    pub corr_strong: f64,
    pub corr_weak: f64,
    /// Idiosyncratic noise scale; large values drown the shared factor.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // Both blocks span all ROIs so every ROI is reconstructable from its
        // peers, and the AR coefficient keeps masked time points predictable
        // from their neighbours.
        SynthConfig {
            num_subjects: 60,
            num_rois: 16,
            t_full: 200,
            class_balance: 0.5,
            ar_coeff: 0.8,
            block_size: 8,
            corr_strong: 0.85,
            corr_weak: 0.5,
            noise_level: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_subjects == 0 || self.t_full == 0 {
            return Err(Error::Config("num_subjects and t_full must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return Err(Error::Config(format!("class_balance {} not in [0, 1]", self.class_balance)));
        }
        if self.ar_coeff.abs() >= 1.0 {
            return Err(Error::Config(format!("ar_coeff {} not in (-1, 1)", self.ar_coeff)));
        }
        if self.block_size < 2 || 2 * self.block_size > self.num_rois {
            return Err(Error::Config(format!(
                "block_size {} needs 2 <= block_size and 2*block_size <= num_rois {}",
                self.block_size, self.num_rois
            )));
        }
        for (name, v) in [("corr_strong", self.corr_strong), ("corr_weak", self.corr_weak)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} not in [0, 1)")));
            }
        }
        if self.noise_level < 0.0 {
            return Err(Error::Config(format!("noise_level {} negative", self.noise_level)));
        }
        Ok(())
    }
}

/// Unit-variance stationary AR(1) path.
fn ar1_path(t: usize, phi: f64, rng: &mut Rng) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = Vec::with_capacity(t);
    let mut prev = rng.normal();
    x.push(prev);
    for _ in 1..t {
        prev = phi * prev + innov * rng.normal();
        x.push(prev);
    }
    x
}

fn synth_series(cfg: &SynthConfig, label: u8, rng: &mut Rng) -> RoiSeries {
    let (t, r, b) = (cfg.t_full, cfg.num_rois, cfg.block_size);
    // Block correlations swap between classes.
    let (corr1, corr2) = if label == 1 {
        (cfg.corr_strong, cfg.corr_weak)
    } else {
        (cfg.corr_weak, cfg.corr_strong)
    };
    let factor1 = ar1_path(t, cfg.ar_coeff, rng);
    let factor2 = ar1_path(t, cfg.ar_coeff, rng);
    let mut m = Matrix::zeros(t, r);
    for roi in 0..r {
        let noise = ar1_path(t, cfg.ar_coeff, rng);
        let (factor, lam) = if roi < b {
            (Some(&factor1), corr1.sqrt())
        } else if roi < 2 * b {
            (Some(&factor2), corr2.sqrt())
        } else {
            (None, 0.0)
        };
        for time in 0..t {
            let v = match factor {
                Some(f) => lam * f[time] + cfg.noise_level * (1.0 - lam * lam).sqrt() * noise[time],
                None => noise[time],
            };
            m.set(time, roi, v);
        }
    }
    standardize(&RoiSeries { values: m, standardized: false })
}

/// Generate the cohort in memory. Labels: the first round(balance*n)
/// subjects in id order are class 1.
pub fn synth_subjects(cfg: &SynthConfig) -> Result<Vec<LoadedSubject>> {
    cfg.validate()?;
    let n_pos = (cfg.class_balance * cfg.num_subjects as f64 + 0.5).floor() as usize;
    let master = Rng::new(cfg.seed);
    let mut out = Vec::with_capacity(cfg.num_subjects);
    for i in 0..cfg.num_subjects {
        let label = u8::from(i < n_pos);
        let id = format!("sub{:04}", i + 1);
        let mut rng = master.derive(i as u64);
        let series = synth_series(cfg, label, &mut rng);
        out.push(LoadedSubject {
            record: SubjectRecord {
                subject_id: id.clone(),
                label,
                site: "synth".into(),
                series_path: PathBuf::from(format!("{id}.csv")),
            },
            series,
        });
    }
    Ok(out)
}

fn format_series(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

/// Generate and write `manifest.csv` plus one series file per subject. The
/// manifest is written last, after every series file has succeeded.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<SubjectRecord>> {
    let subjects = synth_subjects(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for s in &subjects {
        let path = out_dir.join(&s.record.series_path);
        fs::write(&path, format_series(&s.series.values)).map_err(|e| Error::io(&path, e))?;
    }
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for s in &subjects {
        let _ = writeln!(
            manifest,
            "{},{},{},{}",
            s.record.subject_id,
            s.record.label,
            s.record.site,
            s.record.series_path.display()
        );
    }
    let manifest_path = out_dir.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(subjects.into_iter().map(|s| s.record).collect())
}

/// Mean pairwise within-block correlation of the first block, per class.
/// Used to sanity-check the generator's class separation.
pub fn mean_block_correlation(subjects: &[LoadedSubject], block_size: usize) -> (f64, f64) {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for s in subjects {
        let m = &s.series.values;
        let mut acc = 0.0;
        let mut n = 0;
        for a in 0..block_size {
            for b in (a + 1)..block_size {
                acc += pearson(&m.column(a), &m.column(b));
                n += 1;
            }
        }
        let cls = s.record.label as usize;
        sums[cls] += acc / n as f64;
        counts[cls] += 1;
    }
    (sums[0] / counts[0].max(1) as f64, sums[1] / counts[1].max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as IoWrite;

    fn write_tmp(name: &str, contents: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("roimae-data-tests-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn manifest_roundtrip_and_errors() {
        let p = write_tmp("ok.csv", "subject_id,label,site,series_path\n");
        assert!(load_manifest(&p).unwrap().is_empty());

        let p = write_tmp("two.csv", "subject_id,label,site,series_path\ns1,1,yale,a.csv\ns2,0,nyu,b.csv\n");
        let recs = load_manifest(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].subject_id, "s1");
        assert_eq!(recs[0].label, 1);
        assert_eq!(recs[1].site, "nyu");

        let p = write_tmp("dup.csv", "subject_id,label,site,series_path\ns1,1,x,a.csv\ns1,0,x,b.csv\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("s1"), "{err}");

        let p = write_tmp("badlabel.csv", "subject_id,label,site,series_path\ns1,2,x,a.csv\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("label"), "{err}");
    }

    #[test]
    fn series_parsing() {
        let mut body = String::new();
        for i in 0..64 {
            let _ = writeln!(body, "{},{},{},{}", i, i * 2, i * 3, i * 4);
        }
        let p = write_tmp("s64.csv", &body);
        let s = load_series(&p, Some(4)).unwrap();
        assert_eq!((s.t_full(), s.num_rois()), (64, 4));
        assert_eq!(s.values.get(2, 3), 8.0);

        let p = write_tmp("hdr.csv", &format!("roi_a,roi_b,roi_c,roi_d\n{body}"));
        let s = load_series(&p, None).unwrap();
        assert_eq!(s.t_full(), 64);

        let p = write_tmp("ragged.csv", "1,2,3\n4,5\n");
        let err = load_series(&p, None).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");

        let p = write_tmp("alpha.csv", "1,2\n3,x\n");
        let err = load_series(&p, None).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");

        let p = write_tmp("wrongr.csv", "1,2\n3,4\n");
        assert!(load_series(&p, Some(3)).is_err());
    }

    #[test]
    fn standardize_two_point_column() {
        let s = RoiSeries {
            values: Matrix::from_vec(2, 1, vec![0.0, 2.0]).unwrap(),
            standardized: false,
        };
        let z = standardize(&s);
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        assert!((z.values.get(0, 0) + inv_sqrt2).abs() < 1e-12);
        assert!((z.values.get(1, 0) - inv_sqrt2).abs() < 1e-12);
    }

    #[test]
    fn standardize_constant_column_and_idempotence() {
        let s = RoiSeries {
            values: Matrix::from_vec(3, 2, vec![5.0, 1.0, 5.0, 4.0, 5.0, 7.0]).unwrap(),
            standardized: false,
        };
        let z = standardize(&s);
        assert!(z.values.column(0).iter().all(|&v| v == 0.0));
        let zz = standardize(&z);
        for (a, b) in z.values.data().iter().zip(zz.values.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Post-conditions on the non-constant column.
        let col = z.values.column(1);
        let mean = col.iter().sum::<f64>() / 3.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
    }

    fn toy_subject(t_full: usize, r: usize) -> LoadedSubject {
        let mut vals = Matrix::zeros(t_full, r);
        for i in 0..t_full {
            for j in 0..r {
                vals.set(i, j, (i * r + j) as f64);
            }
        }
        LoadedSubject {
            record: SubjectRecord {
                subject_id: "toy".into(),
                label: 1,
                site: "synth".into(),
                series_path: PathBuf::from("toy.csv"),
            },
            series: RoiSeries { values: vals, standardized: true },
        }
    }

    #[test]
    fn crops_exact_length_window() {
        let subject = toy_subject(64, 3);
        let mut rng = Rng::new(4);
        let crops = random_crops(&subject, 10, 64, &mut rng).unwrap();
        assert_eq!(crops.len(), 10);
        for c in &crops {
            assert_eq!(c.window, subject.series.values);
            assert_eq!(c.subject_id, "toy");
        }
    }

    #[test]
    fn crops_short_subject_error_names_it() {
        let subject = toy_subject(32, 3);
        let mut rng = Rng::new(4);
        let err = random_crops(&subject, 1, 64, &mut rng).unwrap_err().to_string();
        assert!(err.contains("toy"), "{err}");
    }

    #[test]
    fn crop_offsets_cover_range_uniformly() {
        // 4 valid offsets; frequencies within three percentage points of 1/4.
        let subject = toy_subject(67, 2);
        let mut rng = Rng::new(20240810);
        let mut counts = [0usize; 4];
        let draws = 10_000;
        let crops = random_crops(&subject, draws, 64, &mut rng).unwrap();
        for c in &crops {
            let offset = (c.window.get(0, 0) / 2.0) as usize;
            counts[offset] += 1;
            // Contiguity: the block equals the source rows it claims.
            assert_eq!(c.window.data(), subject.series.values.row_block(offset, 64).data());
        }
        for &c in &counts {
            assert!(c > 0);
            let f = c as f64 / draws as f64;
            assert!((f - 0.25).abs() < 0.03, "offset frequency {f}");
        }
    }

    #[test]
    fn sliding_window_offsets() {
        let s = toy_subject(64, 2).series;
        assert_eq!(sliding_windows(&s, 64, 32).unwrap().len(), 1);

        let s = toy_subject(128, 2).series;
        let w = sliding_windows(&s, 64, 64).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].get(0, 0), 0.0);
        assert_eq!(w[1].get(0, 0), (64 * 2) as f64);

        // 100 time points, stride 32: offsets 0, 32, then the tail at 36.
        let s = toy_subject(100, 2).series;
        let w = sliding_windows(&s, 64, 32).unwrap();
        let offsets: Vec<usize> = w.iter().map(|m| (m.get(0, 0) / 2.0) as usize).collect();
        assert_eq!(offsets, vec![0, 32, 36]);

        assert!(sliding_windows(&toy_subject(10, 2).series, 64, 32).is_err());
        assert!(sliding_windows(&s, 64, 0).is_err());
    }

    #[test]
    fn synth_balance_and_block_correlation() {
        let cfg = SynthConfig { num_subjects: 40, seed: 11, ..SynthConfig::default() };
        let subjects = synth_subjects(&cfg).unwrap();
        let pos = subjects.iter().filter(|s| s.record.label == 1).count();
        assert_eq!(pos, 20);
        let (c0, c1) = mean_block_correlation(&subjects, cfg.block_size);
        assert!(c1 - c0 >= 0.3, "class separation too small: {c1} vs {c0}");
    }

    #[test]
    fn synth_noise_only_has_no_class_signal() {
        let cfg = SynthConfig {
            num_subjects: 20,
            noise_level: 1e6,
            seed: 12,
            ..SynthConfig::default()
        };
        let subjects = synth_subjects(&cfg).unwrap();
        let (c0, c1) = mean_block_correlation(&subjects, cfg.block_size);
        assert!((c1 - c0).abs() < 0.1, "residual signal: {c1} vs {c0}");
    }

    #[test]
    fn synth_files_roundtrip_exactly() {
        let dir = std::env::temp_dir().join(format!("roimae-synth-{}", std::process::id()));
        let cfg = SynthConfig { num_subjects: 4, t_full: 70, seed: 3, ..SynthConfig::default() };
        let records = synth_generate(&cfg, &dir).unwrap();
        assert_eq!(records.len(), 4);
        let reloaded = load_dataset(&dir.join("manifest.csv"), Some(cfg.num_rois)).unwrap();
        let generated = synth_subjects(&cfg).unwrap();
        for (a, b) in reloaded.iter().zip(&generated) {
            assert_eq!(a.record, b.record);
            for (x, y) in a.series.values.data().iter().zip(b.series.values.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn synth_deterministic_bytes() {
        let cfg = SynthConfig { num_subjects: 3, t_full: 66, seed: 9, ..SynthConfig::default() };
        let a = synth_subjects(&cfg).unwrap();
        let b = synth_subjects(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(format_series(&x.series.values), format_series(&y.series.values));
        }
    }
}
