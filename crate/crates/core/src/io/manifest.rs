use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::embeddings::{write_embeddings, EmbeddingReader};
use super::{parse_header, parse_num, FormatError, LayoutError};
use crate::world::{CellIndex, CellObservation, SiteGrid};

pub const MANIFEST_VERSION: u32 = 1;
const CELLS_SECTION: &str = "[cells]";
const CELLS_HEADER: &str = "row,col,patch_offset,patch_count,gt_target_area,scalar_signal";

/// Manifest fields that are not part of the grid itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiteMeta {
    /// Path of the embedding binary, relative to the manifest.
    pub embedding_file: String,
    pub species: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRecord {
    pub cell: CellIndex,
    pub patch_offset: u64,
    pub patch_count: u64,
    pub gt_target_area: u64,
    pub scalar_signal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSite {
    pub grid: SiteGrid,
    pub meta: SiteMeta,
    pub manifest_path: PathBuf,
}

struct Parsed {
    rows: usize,
    cols: usize,
    dim: usize,
    meta: SiteMeta,
    records: Vec<CellRecord>,
}

fn parse_manifest(text: &str) -> Result<Parsed, FormatError> {
    let lines: Vec<&str> = text.lines().collect();
    let (pairs, section) = parse_header(&lines)?;
    let mut version = None;
    let (mut rows, mut cols, mut dim) = (None, None, None);
    let mut meta = SiteMeta::default();
    let mut embedding_file = None;
    for (line, k, v) in pairs {
        match k.as_str() {
            "format_version" => {
                let found: u32 = parse_num(line, "format_version", &v)?;
                if found != MANIFEST_VERSION {
                    return Err(FormatError::VersionMismatch {
                        found,
                        supported: MANIFEST_VERSION,
                    });
                }
                version = Some(found);
            }
            "rows" => rows = Some(parse_num(line, "rows", &v)?),
            "cols" => cols = Some(parse_num(line, "cols", &v)?),
            "dim" => dim = Some(parse_num(line, "dim", &v)?),
            "embedding_file" => embedding_file = Some(v),
            "species" => meta.species = Some(v),
            "note" => meta.notes.push(v),
            other => {
                return Err(FormatError::MalformedRecord {
                    line,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    let missing = |k: &str| FormatError::MalformedHeader(format!("manifest lacks '{k}'"));
    version.ok_or_else(|| missing("format_version"))?;
    let rows: usize = rows.ok_or_else(|| missing("rows"))?;
    let cols: usize = cols.ok_or_else(|| missing("cols"))?;
    let dim: usize = dim.ok_or_else(|| missing("dim"))?;
    meta.embedding_file = embedding_file.ok_or_else(|| missing("embedding_file"))?;
    if rows == 0 || cols == 0 || dim == 0 {
        return Err(FormatError::MalformedHeader(
            "rows, cols and dim must be positive".into(),
        ));
    }

    let section = section.ok_or_else(|| missing(CELLS_SECTION))?;
    if lines[section].trim() != CELLS_SECTION {
        return Err(FormatError::MalformedRecord {
            line: section + 1,
            msg: format!("expected '{CELLS_SECTION}'"),
        });
    }
    let mut body = lines
        .iter()
        .enumerate()
        .skip(section + 1)
        .filter(|(_, l)| !l.trim().is_empty());
    match body.next() {
        Some((_, l)) if l.trim() == CELLS_HEADER => {}
        Some((i, _)) => {
            return Err(FormatError::MalformedRecord {
                line: i + 1,
                msg: format!("expected column header '{CELLS_HEADER}'"),
            })
        }
        None => return Err(missing("cell column header")),
    }
    let mut records = Vec::with_capacity(rows * cols);
    for (i, l) in body {
        let line = i + 1;
        let f: Vec<&str> = l.trim().split(',').collect();
        if f.len() != 6 {
            return Err(FormatError::MalformedRecord {
                line,
                msg: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let scalar_signal = if f[5].trim().is_empty() {
            None
        } else {
            Some(parse_num(line, "scalar_signal", f[5])?)
        };
        records.push(CellRecord {
            cell: CellIndex::new(parse_num(line, "row", f[0])?, parse_num(line, "col", f[1])?),
            patch_offset: parse_num(line, "patch_offset", f[2])?,
            patch_count: parse_num(line, "patch_count", f[3])?,
            gt_target_area: parse_num(line, "gt_target_area", f[4])?,
            scalar_signal,
        });
    }
    Ok(Parsed {
        rows,
        cols,
        dim,
        meta,
        records,
    })
}

/// Checks that every cell appears once and that patch ranges tile
/// `[0, total)` with no gaps or overlaps. Returns the record order by offset.
fn check_layout(p: &Parsed, file_count: u64) -> Result<Vec<usize>, FormatError> {
    let mut seen = HashSet::with_capacity(p.records.len());
    for r in &p.records {
        if r.cell.row >= p.rows || r.cell.col >= p.cols {
            return Err(FormatError::Layout(LayoutError::OutOfBounds(r.cell)));
        }
        if !seen.insert(r.cell) {
            return Err(FormatError::Layout(LayoutError::DuplicateCell(r.cell)));
        }
    }
    for row in 0..p.rows {
        for col in 0..p.cols {
            let c = CellIndex::new(row, col);
            if !seen.contains(&c) {
                return Err(FormatError::Layout(LayoutError::MissingCell(c)));
            }
        }
    }
    let mut order: Vec<usize> = (0..p.records.len()).collect();
    order.sort_by_key(|&i| (p.records[i].patch_offset, p.records[i].patch_count));
    let mut cursor = 0u64;
    for &i in &order {
        let r = &p.records[i];
        if r.patch_offset < cursor {
            return Err(FormatError::Layout(LayoutError::Overlap {
                offset: r.patch_offset,
            }));
        }
        if r.patch_offset > cursor {
            return Err(FormatError::Layout(LayoutError::Gap { offset: cursor }));
        }
        cursor += r.patch_count;
    }
    if cursor != file_count {
        return Err(FormatError::Layout(LayoutError::CountMismatch {
            manifest: cursor,
            file: file_count,
        }));
    }
    Ok(order)
}

/// Loads and fully validates a site. The embedding file is streamed, one
/// patch at a time, in offset order.
pub fn load_site(manifest_path: &Path) -> Result<LoadedSite, FormatError> {
    let site = load_site_unvalidated(manifest_path)?;
    let violations = site.grid.validate();
    if let Some(first) = violations.first() {
        return Err(FormatError::Invalid(format!(
            "{} violation(s), first: {first}",
            violations.len()
        )));
    }
    Ok(site)
}

/// Like [`load_site`] but skips [`SiteGrid::validate`], for linting tools
/// that want to list every violation. Format and layout errors still fail.
pub fn load_site_unvalidated(manifest_path: &Path) -> Result<LoadedSite, FormatError> {
    let text =
        std::fs::read_to_string(manifest_path).map_err(|e| FormatError::io(manifest_path, e))?;
    let parsed = parse_manifest(&text)?;
    let emb_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&parsed.meta.embedding_file);
    let mut reader = EmbeddingReader::open(&emb_path)?;
    let header = reader.header();
    if header.dim as usize != parsed.dim {
        return Err(FormatError::DimensionMismatch(format!(
            "manifest declares dim {}, embedding file has {}",
            parsed.dim, header.dim
        )));
    }
    let order = check_layout(&parsed, header.count)?;

    let mut cells: Vec<Option<CellObservation>> = vec![None; parsed.rows * parsed.cols];
    for &i in &order {
        let r = &parsed.records[i];
        let mut patches = Vec::with_capacity(r.patch_count as usize);
        for _ in 0..r.patch_count {
            let p = reader.next_patch()?.ok_or(FormatError::Truncated {
                expected: header.count,
                actual: r.patch_offset + patches.len() as u64,
            })?;
            patches.push(p);
        }
        cells[r.cell.row * parsed.cols + r.cell.col] = Some(CellObservation {
            patches,
            gt_target_area: r.gt_target_area,
            scalar_signal: r.scalar_signal,
        });
    }
    let cells = cells
        .into_iter()
        .map(|c| c.expect("layout check covers every cell"))
        .collect();
    let grid = SiteGrid::from_cells(parsed.rows, parsed.cols, parsed.dim, cells);
    Ok(LoadedSite {
        grid,
        meta: parsed.meta,
        manifest_path: manifest_path.to_path_buf(),
    })
}

fn render_manifest(grid: &SiteGrid, meta: &SiteMeta) -> String {
    let mut s = String::new();
    s.push_str("# ctxsurvey site manifest\n");
    let _ = writeln!(s, "format_version = {MANIFEST_VERSION}");
    let _ = writeln!(s, "rows = {}", grid.rows);
    let _ = writeln!(s, "cols = {}", grid.cols);
    let _ = writeln!(s, "dim = {}", grid.dim);
    let _ = writeln!(s, "embedding_file = {}", meta.embedding_file);
    if let Some(sp) = &meta.species {
        let _ = writeln!(s, "species = {sp}");
    }
    for n in &meta.notes {
        let _ = writeln!(s, "note = {n}");
    }
    s.push_str(CELLS_SECTION);
    s.push('\n');
    s.push_str(CELLS_HEADER);
    s.push('\n');
    let mut offset = 0u64;
    for (i, cell) in grid.cells.iter().enumerate() {
        let at = grid.index_of(i);
        let count = cell.patches.len() as u64;
        let scalar = cell
            .scalar_signal
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{offset},{count},{},{scalar}",
            at.row, at.col, cell.gt_target_area
        );
        offset += count;
    }
    s
}

/// Writes the manifest at `manifest_path` and the embedding binary next to
/// it under `meta.embedding_file`. Cells are written row-major with
/// consecutive patch ranges, so saving a loaded canonical site reproduces it
/// byte for byte.
pub fn save_site(
    manifest_path: &Path,
    grid: &SiteGrid,
    meta: &SiteMeta,
) -> Result<(), FormatError> {
    if meta.embedding_file.trim().is_empty() {
        return Err(FormatError::MalformedHeader(
            "embedding_file must be set".into(),
        ));
    }
    for text in meta.species.iter().chain(&meta.notes) {
        if text.contains('\n') {
            return Err(FormatError::MalformedHeader(
                "metadata must be single-line".into(),
            ));
        }
    }
    let emb_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&meta.embedding_file);
    let patches: Vec<_> = grid.cells.iter().flat_map(|c| c.patches.iter()).collect();
    write_embeddings(&emb_path, grid.dim, patches.into_iter())?;
    std::fs::write(manifest_path, render_manifest(grid, meta))
        .map_err(|e| FormatError::io(manifest_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::PatchEmbedding;

    fn grid() -> SiteGrid {
        let cells = (0..6)
            .map(|i| {
                let patches = (0..=i % 3)
                    .map(|j| PatchEmbedding::new(vec![1.0 + i as f32, j as f32, 0.5]))
                    .collect();
                let c = CellObservation::new(patches, (i * 10) as u64);
                if i % 2 == 0 {
                    c.with_scalar(0.1 * i as f64)
                } else {
                    c
                }
            })
            .collect();
        SiteGrid::from_cells(2, 3, 3, cells)
    }

    fn meta() -> SiteMeta {
        SiteMeta {
            embedding_file: "site.emb".into(),
            species: Some("Gorgonia ventalina".into()),
            notes: vec!["unit test".into()],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("site.manifest");
        save_site(&m, &grid(), &meta()).unwrap();
        let first_manifest = std::fs::read(&m).unwrap();
        let first_emb = std::fs::read(dir.path().join("site.emb")).unwrap();
        let loaded = load_site(&m).unwrap();
        assert_eq!(loaded.grid, grid());
        assert_eq!(loaded.meta, meta());

        let other = tempfile::tempdir().unwrap();
        let m2 = other.path().join("site.manifest");
        save_site(&m2, &loaded.grid, &loaded.meta).unwrap();
        assert_eq!(std::fs::read(&m2).unwrap(), first_manifest);
        assert_eq!(
            std::fs::read(other.path().join("site.emb")).unwrap(),
            first_emb
        );
    }

    fn rewrite(m: &Path, from: &str, to: &str) {
        let text = std::fs::read_to_string(m).unwrap();
        assert!(text.contains(from), "{from} not in manifest");
        std::fs::write(m, text.replacen(from, to, 1)).unwrap();
    }

    fn saved() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("site.manifest");
        save_site(&m, &grid(), &meta()).unwrap();
        (dir, m)
    }

    #[test]
    fn version_mismatch() {
        let (_d, m) = saved();
        rewrite(&m, "format_version = 1", "format_version = 2");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn overlapping_offsets() {
        let (_d, m) = saved();
        // Cell (0,2) starts at offset 3; pull it back onto cell (0,1)'s range.
        rewrite(&m, "0,2,3,3,", "0,2,2,3,");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::Layout(LayoutError::Overlap { offset: 2 }))
        ));
    }

    #[test]
    fn gaps_missing_and_duplicate_cells() {
        let (_d, m) = saved();
        rewrite(&m, "0,2,3,3,", "0,2,4,3,");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::Layout(LayoutError::Gap { .. }))
        ));

        let (_d, m) = saved();
        rewrite(&m, "0,2,3,3,", "0,1,3,3,");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::Layout(LayoutError::DuplicateCell(_)))
        ));

        let (_d, m) = saved();
        rewrite(&m, "rows = 2", "rows = 3");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::Layout(LayoutError::MissingCell(_)))
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let (_d, m) = saved();
        rewrite(&m, "dim = 3", "dim = 4");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn malformed_lines() {
        let (_d, m) = saved();
        rewrite(&m, "cols = 3", "cols: 3");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::MalformedRecord { .. })
        ));

        let (_d, m) = saved();
        rewrite(&m, "rows = 2\n", "");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::MalformedHeader(_))
        ));

        let (_d, m) = saved();
        rewrite(&m, "1,0,6,1,30,", "1,0,6,1,thirty,");
        assert!(matches!(
            load_site(&m),
            Err(FormatError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn truncated_embeddings() {
        let (d, m) = saved();
        let emb = d.path().join("site.emb");
        let bytes = std::fs::read(&emb).unwrap();
        std::fs::write(&emb, &bytes[..bytes.len() - 12]).unwrap();
        match load_site(&m) {
            Err(FormatError::Truncated { expected, actual }) => {
                assert_eq!((expected, actual), (12, 11));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_image_cell_loads() {
        // One cell holding all 37 x 37 patches of a 518 x 518 crop.
        let patches = (0..1369)
            .map(|i| PatchEmbedding::new(vec![1.0, i as f32, -(i as f32)]))
            .collect();
        let g = SiteGrid::from_cells(1, 1, 3, vec![CellObservation::new(patches, 42)]);
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("one.manifest");
        save_site(
            &m,
            &g,
            &SiteMeta {
                embedding_file: "one.emb".into(),
                ..Default::default()
            },
        )
        .unwrap();
        let loaded = load_site(&m).unwrap();
        assert_eq!(loaded.grid.cells[0].patches.len(), 1369);
        assert_eq!(loaded.grid, g);
    }

    #[test]
    fn invalid_grid_content_is_rejected() {
        let mut g = grid();
        g.cells[0].patches[0] = PatchEmbedding::new(vec![0.0, 0.0, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("site.manifest");
        save_site(&m, &g, &meta()).unwrap();
        assert!(matches!(load_site(&m), Err(FormatError::Invalid(_))));
    }
}
