use std::collections::HashMap;

use thiserror::Error;

use super::{CellKind, HouseLayout, LabelId};

pub(crate) const HEADER: &str = "gaple-house v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("line 1: expected header `{HEADER}`")]
    MissingHeader,
    #[error("line {line}: malformed legend entry, expected `c=label_name`")]
    BadLegend { line: usize },
    #[error("line {line}: legend character `{ch}` is reserved or already defined")]
    DuplicateLegend { line: usize, ch: char },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("line {line}: ragged grid row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        line: usize,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: unknown character `{ch}`")]
    UnknownChar { line: usize, column: usize, ch: char },
    #[error("line {line}, column {column}: border cell is not a wall")]
    OpenBorder { line: usize, column: usize },
}

/// Parses the text layout format: a header line, `c=label` legend lines, a
/// blank line, then one grid row per line (`#` wall, `.` floor, legend
/// characters for objects).
pub fn parse_layout(text: &str) -> Result<HouseLayout, LayoutError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    match lines.next() {
        Some((_, l)) if l.trim() == HEADER => {}
        _ => return Err(LayoutError::MissingHeader),
    }

    let mut labels = vec!["background".to_string()];
    let mut legend: HashMap<char, LabelId> = HashMap::new();
    for (line, l) in lines.by_ref() {
        if l.trim().is_empty() {
            break;
        }
        let (ch, name) = l.split_once('=').ok_or(LayoutError::BadLegend { line })?;
        let mut chars = ch.trim().chars();
        let (Some(ch), None) = (chars.next(), chars.next()) else {
            return Err(LayoutError::BadLegend { line });
        };
        let name = name.trim();
        if name.is_empty() || name == "background" {
            return Err(LayoutError::BadLegend { line });
        }
        if ch == '#' || ch == '.' || ch.is_whitespace() || legend.contains_key(&ch) {
            return Err(LayoutError::DuplicateLegend { line, ch });
        }
        let id = match labels.iter().position(|l| l == name) {
            Some(i) => i as LabelId,
            None => {
                labels.push(name.to_string());
                (labels.len() - 1) as LabelId
            }
        };
        legend.insert(ch, id);
    }

    let rows: Vec<(usize, Vec<char>)> = lines
        .map(|(line, l)| (line, l.chars().collect::<Vec<_>>()))
        .collect();
    let last = rows
        .iter()
        .rposition(|(_, r)| !r.is_empty())
        .ok_or(LayoutError::EmptyGrid)?;
    let rows = &rows[..=last];
    let width = rows[0].1.len();
    let height = rows.len();

    let mut cells = Vec::with_capacity(width * height);
    for (row, (line, chars)) in rows.iter().enumerate() {
        if chars.len() != width {
            return Err(LayoutError::RaggedRow {
                line: *line,
                row: row + 1,
                expected: width,
                found: chars.len(),
            });
        }
        for (col, &ch) in chars.iter().enumerate() {
            let cell = match ch {
                '#' => CellKind::Wall,
                '.' => CellKind::Floor,
                c => match legend.get(&c) {
                    Some(&id) => CellKind::Object(id),
                    None => {
                        return Err(LayoutError::UnknownChar {
                            line: *line,
                            column: col + 1,
                            ch,
                        })
                    }
                },
            };
            let border = row == 0 || col == 0 || row + 1 == height || col + 1 == width;
            if border && cell != CellKind::Wall {
                return Err(LayoutError::OpenBorder {
                    line: *line,
                    column: col + 1,
                });
            }
            cells.push(cell);
        }
    }

    Ok(HouseLayout::from_cells(width, height, cells, labels))
}

fn legend_char(id: LabelId) -> char {
    const CHARS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    let i = id as usize - 1;
    match CHARS.get(i) {
        Some(&c) => c as char,
        None => char::from_u32(0xC0 + (i - CHARS.len()) as u32).unwrap_or('?'),
    }
}

impl HouseLayout {
    /// Serializes to the text layout format. The legend lists every label in
    /// id order so that ids survive a round trip.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (id, name) in self.labels.iter().enumerate().skip(1) {
            out.push(legend_char(id as LabelId));
            out.push('=');
            out.push_str(name);
            out.push('\n');
        }
        out.push('\n');
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(match self.cells[y * self.width + x] {
                    CellKind::Wall => '#',
                    CellKind::Floor => '.',
                    CellKind::Object(id) => legend_char(id),
                });
            }
            out.push('\n');
        }
        out
    }
}
