//! Admin data export in CSV, XML and fixed-width text, with parsers for
//! each format.

use std::fmt;
use std::str::FromStr;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::ehr::{AccountStatus, EhrState, Role, UserAccount};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetKind {
    Medication,
    Doctors,
    Laboratory,
    Patients,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] =
        [DatasetKind::Medication, DatasetKind::Doctors, DatasetKind::Laboratory, DatasetKind::Patients];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Medication => "medication",
            DatasetKind::Doctors => "doctors",
            DatasetKind::Laboratory => "laboratory",
            DatasetKind::Patients => "patients",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            DatasetKind::Medication => &["id", "name", "stock"],
            DatasetKind::Doctors => &["address", "name", "contact", "status"],
            DatasetKind::Laboratory => &["id", "test_name", "parameter", "unit", "reference_min", "reference_max"],
            DatasetKind::Patients => &["address", "name", "date_of_birth", "sex", "contact", "status"],
        }
    }

    fn from_columns(header: &[String]) -> Option<DatasetKind> {
        DatasetKind::ALL.into_iter().find(|k| k.columns().iter().eq(header.iter()))
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<DatasetKind, String> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dataset {s:?}"))
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExportFormat {
    Csv,
    Xml,
    Txt,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 3] = [ExportFormat::Csv, ExportFormat::Xml, ExportFormat::Txt];

    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Xml => "xml",
            ExportFormat::Txt => "txt",
        }
    }

    pub fn mime_type(self) -> &'static str {
        match self {
            ExportFormat::Csv => "text/csv",
            ExportFormat::Xml => "application/xml",
            ExportFormat::Txt => "text/plain",
        }
    }
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<ExportFormat, String> {
        ExportFormat::ALL
            .into_iter()
            .find(|f| f.extension().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown format {s:?}"))
    }
}

/// `{dataset}_{yyyymmdd}.{ext}`
pub fn export_filename(kind: DatasetKind, format: ExportFormat, date: chrono::NaiveDate) -> String {
    format!("{}_{}.{}", kind.name(), date.format("%Y%m%d"), format.extension())
}

/// A table whose column set is fixed by its kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub rows: Vec<Vec<String>>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn status(s: AccountStatus) -> String {
    s.to_string()
}

impl Dataset {
    pub fn empty(kind: DatasetKind) -> Dataset {
        Dataset { kind, rows: Vec::new() }
    }

    pub fn columns(&self) -> &'static [&'static str] {
        self.kind.columns()
    }

    /// Registry and inventory snapshot. Clinical records are never exported.
    pub fn from_state(kind: DatasetKind, state: &EhrState) -> Dataset {
        let users = |role: Role| state.accounts.values().filter(move |a: &&UserAccount| a.role == role);
        let rows = match kind {
            DatasetKind::Medication => {
                state.medications.values().map(|m| vec![m.id.to_string(), m.name.clone(), m.stock.to_string()]).collect()
            }
            DatasetKind::Doctors => users(Role::Doctor)
                .map(|a| vec![a.address.to_hex(), a.profile.name.clone(), opt(&a.profile.contact), status(a.status)])
                .collect(),
            DatasetKind::Patients => users(Role::Patient)
                .map(|a| {
                    vec![
                        a.address.to_hex(),
                        a.profile.name.clone(),
                        opt(&a.profile.date_of_birth),
                        opt(&a.profile.sex),
                        opt(&a.profile.contact),
                        status(a.status),
                    ]
                })
                .collect(),
            DatasetKind::Laboratory => state
                .lab_definitions
                .values()
                .flat_map(|d| d.parameters.iter().map(move |p| (d, p)))
                .enumerate()
                .map(|(i, (d, p))| {
                    vec![
                        (i + 1).to_string(),
                        d.test_name.clone(),
                        p.name.clone(),
                        p.unit.clone(),
                        p.ref_min.to_string(),
                        p.ref_max.to_string(),
                    ]
                })
                .collect(),
        };
        Dataset { kind, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: u64,
    pub column: u64,
    pub message: String,
}

impl ParseError {
    fn new(line: u64, column: u64, message: impl Into<String>) -> ParseError {
        ParseError { line, column, message: message.into() }
    }
}

pub fn export(dataset: &Dataset, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Csv => export_csv(dataset),
        ExportFormat::Xml => export_xml(dataset).into_bytes(),
        ExportFormat::Txt => export_txt(dataset).into_bytes(),
    }
}

pub fn parse(bytes: &[u8], format: ExportFormat) -> Result<Dataset, ParseError> {
    match format {
        ExportFormat::Csv => parse_csv(bytes),
        ExportFormat::Xml => parse_xml(utf8(bytes)?),
        ExportFormat::Txt => parse_txt(utf8(bytes)?),
    }
}

fn utf8(bytes: &[u8]) -> Result<&str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| {
        let (line, column) = line_col(&bytes[..e.valid_up_to()]);
        ParseError::new(line, column, "invalid UTF-8")
    })
}

fn line_col(prefix: &[u8]) -> (u64, u64) {
    let line = prefix.iter().filter(|&&b| b == b'\n').count() as u64 + 1;
    let start = prefix.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let column = String::from_utf8_lossy(&prefix[start..]).chars().count() as u64 + 1;
    (line, column)
}

// CSV

fn export_csv(d: &Dataset) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(d.columns()).expect("in-memory write");
    for row in &d.rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn parse_csv(bytes: &[u8]) -> Result<Dataset, ParseError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_reader(bytes);
    let mut records = r.records();
    let csv_err = |e: csv::Error| {
        let (line, column) = match e.position() {
            Some(p) => line_col(&bytes[..(p.byte() as usize).min(bytes.len())]),
            None => (0, 0),
        };
        ParseError::new(line, column, e.to_string())
    };
    let header: Vec<String> = match records.next() {
        Some(h) => h.map_err(csv_err)?.iter().map(str::to_string).collect(),
        None => return Err(ParseError::new(1, 1, "missing header row")),
    };
    let kind = DatasetKind::from_columns(&header).ok_or_else(|| ParseError::new(1, 1, "unrecognized header row"))?;
    let mut rows = Vec::new();
    for rec in records {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok(Dataset { kind, rows })
}

// XML

fn xml_escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\r' => out.push_str("&#13;"),
            '\n' => out.push_str("&#10;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

fn export_xml(d: &Dataset) -> String {
    let root = d.kind.name();
    let mut out = format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<{root}>\n");
    for row in &d.rows {
        out.push_str("  <row>\n");
        for (col, cell) in d.columns().iter().zip(row) {
            out.push_str(&format!("    <{col}>"));
            xml_escape(cell, &mut out);
            out.push_str(&format!("</{col}>\n"));
        }
        out.push_str("  </row>\n");
    }
    out.push_str(&format!("</{root}>\n"));
    out
}

fn parse_xml(text: &str) -> Result<Dataset, ParseError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(false);
    let err = |reader: &Reader<&[u8]>, msg: String| {
        let pos = (reader.buffer_position() as usize).min(text.len());
        let (line, column) = line_col(&text.as_bytes()[..pos]);
        ParseError::new(line, column, msg)
    };

    #[derive(PartialEq)]
    enum At {
        Prolog,
        Root,
        Row,
        Cell,
        Done,
    }
    let mut at = At::Prolog;
    let mut kind = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut row: Vec<String> = Vec::new();
    let mut cell = String::new();
    loop {
        let event = reader.read_event().map_err(|e| err(&reader, e.to_string()))?;
        match event {
            Event::Decl(_) | Event::Comment(_) if at == At::Prolog || at == At::Done => {}
            Event::Eof => {
                if at != At::Done {
                    return Err(err(&reader, "unexpected end of document".into()));
                }
                break;
            }
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                match at {
                    At::Prolog => {
                        kind = Some(name.parse::<DatasetKind>().map_err(|m| err(&reader, m))?);
                        at = At::Root;
                    }
                    At::Root if name == "row" => {
                        row.clear();
                        at = At::Row;
                    }
                    At::Row => {
                        let columns = kind.expect("set at root").columns();
                        match columns.get(row.len()) {
                            Some(expected) if *expected == name => {
                                cell.clear();
                                at = At::Cell;
                            }
                            _ => return Err(err(&reader, format!("unexpected element <{name}>"))),
                        }
                    }
                    _ => return Err(err(&reader, format!("unexpected element <{name}>"))),
                }
            }
            Event::Empty(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                let columns = kind.map(DatasetKind::columns).unwrap_or_default();
                if at == At::Row && columns.get(row.len()) == Some(&name.as_str()) {
                    row.push(String::new());
                } else if at == At::Prolog {
                    kind = Some(name.parse::<DatasetKind>().map_err(|m| err(&reader, m))?);
                    at = At::Done;
                } else {
                    return Err(err(&reader, format!("unexpected element <{name}/>")));
                }
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| err(&reader, e.to_string()))?;
                if at == At::Cell {
                    cell.push_str(&s);
                } else if !s.chars().all(char::is_whitespace) {
                    return Err(err(&reader, "unexpected text".into()));
                }
            }
            Event::CData(c) if at == At::Cell => cell.push_str(&String::from_utf8_lossy(&c)),
            Event::End(_) => match at {
                At::Cell => {
                    row.push(std::mem::take(&mut cell));
                    at = At::Row;
                }
                At::Row => {
                    let columns = kind.expect("set at root").columns();
                    if row.len() != columns.len() {
                        return Err(err(&reader, format!("row has {} of {} columns", row.len(), columns.len())));
                    }
                    rows.push(std::mem::take(&mut row));
                    at = At::Root;
                }
                At::Root => at = At::Done,
                _ => return Err(err(&reader, "unbalanced end tag".into())),
            },
            other => return Err(err(&reader, format!("unexpected {other:?}"))),
        }
    }
    let kind = kind.ok_or_else(|| ParseError::new(1, 1, "missing root element"))?;
    Ok(Dataset { kind, rows })
}

// Fixed-width text

fn txt_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    let kept = out.trim_end_matches(' ').len();
    let trailing = out.len() - kept;
    out.truncate(kept);
    out.push_str(&"\\s".repeat(trailing));
    out
}

fn txt_unescape(s: &str, line: u64, column: u64) -> Result<String, ParseError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some('s') => out.push(' '),
            other => return Err(ParseError::new(line, column, format!("bad escape \\{}", other.unwrap_or(' ')))),
        }
    }
    Ok(out)
}

fn export_txt(d: &Dataset) -> String {
    let header: Vec<String> = d.columns().iter().map(|c| c.to_string()).collect();
    let body: Vec<Vec<String>> = d.rows.iter().map(|r| r.iter().map(|c| txt_escape(c)).collect()).collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            body.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (cell, w) in cells.iter().zip(&widths) {
            s.push_str(cell);
            s.push_str(&" ".repeat(w - cell.chars().count() + 2));
        }
        s.trim_end_matches(' ').to_string() + "\n"
    };
    let mut out = line(&header);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for row in &body {
        out.push_str(&line(row));
    }
    out
}

fn parse_txt(text: &str) -> Result<Dataset, ParseError> {
    let Some(body) = text.strip_suffix('\n') else {
        return Err(ParseError::new(1, 1, "missing trailing newline"));
    };
    let lines: Vec<Vec<char>> = body.split('\n').map(|l| l.chars().collect()).collect();
    if lines.len() < 2 {
        return Err(ParseError::new(lines.len() as u64 + 1, 1, "missing header or separator line"));
    }
    // Column spans come from the runs of dashes on the separator line.
    let sep = &lines[1];
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < sep.len() {
        match sep[i] {
            '-' => {
                let start = i;
                while i < sep.len() && sep[i] == '-' {
                    i += 1;
                }
                spans.push((start, i));
            }
            ' ' => i += 1,
            _ => return Err(ParseError::new(2, i as u64 + 1, "separator line may only hold dashes and spaces")),
        }
    }
    let cut = |line: &[char], n: u64| -> Result<Vec<String>, ParseError> {
        let mut cells = Vec::with_capacity(spans.len());
        for (k, &(start, end)) in spans.iter().enumerate() {
            let gap_end = spans.get(k + 1).map_or(line.len(), |s| s.0).min(line.len());
            if gap_end > end && line[end..gap_end].iter().any(|&c| c != ' ') {
                return Err(ParseError::new(n, end as u64 + 1, "cell overflows its column"));
            }
            let s: String = line.get(start..end.min(line.len())).unwrap_or_default().iter().collect();
            cells.push(txt_unescape(s.trim_end_matches(' '), n, start as u64 + 1)?);
        }
        if let Some(&(start, _)) = spans.first() {
            if line[..start.min(line.len())].iter().any(|&c| c != ' ') {
                return Err(ParseError::new(n, 1, "text before the first column"));
            }
        }
        Ok(cells)
    };
    let header = cut(&lines[0], 1)?;
    let kind = DatasetKind::from_columns(&header).ok_or_else(|| ParseError::new(1, 1, "unrecognized header line"))?;
    let rows = lines[2..].iter().enumerate().map(|(k, l)| cut(l, k as u64 + 3)).collect::<Result<_, _>>()?;
    Ok(Dataset { kind, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Dataset {
        Dataset {
            kind: DatasetKind::Laboratory,
            rows: (1..=3)
                .map(|i| {
                    vec![
                        i.to_string(),
                        "Test".into(),
                        format!("Parameter{i}"),
                        format!("Unit{i}"),
                        i.to_string(),
                        (i * 10).to_string(),
                    ]
                })
                .collect(),
        }
    }

    #[test]
    fn empty_laboratory_csv_is_header_only() {
        let out = export(&Dataset::empty(DatasetKind::Laboratory), ExportFormat::Csv);
        assert_eq!(out, b"id,test_name,parameter,unit,reference_min,reference_max\n");
    }

    #[test]
    fn reference_lab_csv_rows() {
        let out = String::from_utf8(export(&reference(), ExportFormat::Csv)).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(&lines[1..], ["1,Test,Parameter1,Unit1,1,10", "2,Test,Parameter2,Unit2,2,20", "3,Test,Parameter3,Unit3,3,30"]);
    }

    #[test]
    fn reference_lab_round_trips_in_every_format() {
        for f in ExportFormat::ALL {
            assert_eq!(parse(&export(&reference(), f), f).unwrap(), reference(), "{f:?}");
        }
    }

    #[test]
    fn comma_cell_is_quoted() {
        let d = Dataset { kind: DatasetKind::Medication, rows: vec![vec!["1".into(), "a,b".into(), "2".into()]] };
        let out = String::from_utf8(export(&d, ExportFormat::Csv)).unwrap();
        assert_eq!(out.lines().nth(1).unwrap(), "1,\"a,b\",2");
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let e = parse(b"id,name,stock\n1,x\n", ExportFormat::Csv).unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn xml_unknown_element_is_rejected() {
        let doc = "<medication>\n  <row>\n    <id>1</id>\n    <name>x</name>\n    <stock>2</stock>\n    <extra>3</extra>\n  </row>\n</medication>\n";
        let e = parse(doc.as_bytes(), ExportFormat::Xml).unwrap_err();
        assert_eq!(e.line, 6, "{e}");
    }

    #[test]
    fn txt_layout() {
        let out = String::from_utf8(export(&reference(), ExportFormat::Txt)).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "id  test_name  parameter   unit   reference_min  reference_max");
        assert_eq!(lines[1], "--  ---------  ----------  -----  -------------  -------------");
        assert_eq!(lines[2], "1   Test       Parameter1  Unit1  1              10");
    }

    #[test]
    fn tricky_cells_round_trip() {
        let d = Dataset {
            kind: DatasetKind::Medication,
            rows: vec![
                vec!["".into(), " lead and trail  ".into(), "tab\there".into()],
                vec!["\\n".into(), "line\nbreak\r\n".into(), "ünïcödé, \"quoted\" <&>".into()],
                vec!["   ".into(), "--".into(), "\\".into()],
            ],
        };
        for f in ExportFormat::ALL {
            assert_eq!(parse(&export(&d, f), f).unwrap(), d, "{f:?}");
        }
    }
}
