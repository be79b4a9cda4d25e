use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use super::DataError;

/// Dense binary model × item response table. `None` marks a missing response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    values: Vec<Option<bool>>,
}

fn check_unique(ids: &[String], what: &'static str) -> Result<(), DataError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DataError::DuplicateId { kind: what, id: id.clone() });
        }
    }
    Ok(())
}

impl ResponseMatrix {
    pub fn new(model_ids: Vec<String>, item_ids: Vec<String>, values: Vec<Option<bool>>) -> Result<Self, DataError> {
        if values.len() != model_ids.len() * item_ids.len() {
            return Err(DataError::Shape {
                models: model_ids.len(),
                items: item_ids.len(),
                cells: values.len(),
            });
        }
        check_unique(&model_ids, "model")?;
        check_unique(&item_ids, "item")?;
        Ok(Self { model_ids, item_ids, values })
    }

    /// Complete matrix from rows of 0/1 responses.
    pub fn from_rows(model_ids: Vec<String>, item_ids: Vec<String>, rows: &[Vec<bool>]) -> Result<Self, DataError> {
        let values = rows.iter().flat_map(|r| r.iter().map(|&y| Some(y))).collect();
        Self::new(model_ids, item_ids, values)
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    #[inline]
    pub fn get(&self, model: usize, item: usize) -> Option<bool> {
        self.values[model * self.item_ids.len() + item]
    }

    pub fn row(&self, model: usize) -> &[Option<bool>] {
        let n = self.item_ids.len();
        &self.values[model * n..(model + 1) * n]
    }

    pub fn column(&self, item: usize) -> impl Iterator<Item = Option<bool>> + '_ {
        (0..self.model_ids.len()).map(move |m| self.get(m, item))
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|m| m == id)
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Sum of correct responses per model, missing cells counting as 0.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.n_models())
            .map(|m| self.row(m).iter().filter(|v| **v == Some(true)).count() as f64)
            .collect()
    }

    /// Sub-matrix with the given model and item positions, in the given order.
    pub fn select(&self, models: &[usize], items: &[usize]) -> Self {
        let mut values = Vec::with_capacity(models.len() * items.len());
        for &m in models {
            values.extend(items.iter().map(|&i| self.get(m, i)));
        }
        Self {
            model_ids: models.iter().map(|&m| self.model_ids[m].clone()).collect(),
            item_ids: items.iter().map(|&i| self.item_ids[i].clone()).collect(),
            values,
        }
    }

    pub fn select_items(&self, items: &[usize]) -> Self {
        let models: Vec<usize> = (0..self.n_models()).collect();
        self.select(&models, items)
    }

    pub fn select_models(&self, models: &[usize]) -> Self {
        let items: Vec<usize> = (0..self.n_items()).collect();
        self.select(models, &items)
    }

    /// Reads the CSV format: header `model_id,<item ids…>`, body cells `0`, `1` or empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(r) => r.map_err(|e| DataError::Csv(e.to_string()))?,
            None => return Err(DataError::Header("empty file".into())),
        };
        if header.get(0).map(str::trim) != Some("model_id") {
            return Err(DataError::Header(format!(
                "first header cell must be `model_id`, found `{}`",
                header.get(0).unwrap_or("")
            )));
        }
        let item_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_owned()).collect();
        if item_ids.iter().any(String::is_empty) {
            return Err(DataError::Header("empty item identifier in header".into()));
        }
        check_unique(&item_ids, "item")?;

        let mut model_ids = Vec::new();
        let mut values = Vec::new();
        for (row, record) in records.enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
            if record.len() != item_ids.len() + 1 {
                return Err(DataError::RowLength { line, expected: item_ids.len() + 1, found: record.len() });
            }
            let model = record[0].trim().to_owned();
            if model.is_empty() {
                return Err(DataError::Header(format!("line {line}: empty model_id")));
            }
            for (j, cell) in record.iter().skip(1).enumerate() {
                values.push(match cell.trim() {
                    "" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => {
                        return Err(DataError::Cell {
                            line,
                            model: model.clone(),
                            item: item_ids[j].clone(),
                            value: other.to_owned(),
                        })
                    }
                });
            }
            model_ids.push(model);
        }
        check_unique(&model_ids, "model")?;
        Ok(Self { model_ids, item_ids, values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| DataError::Csv(e.to_string());
        wtr.write_record(std::iter::once("model_id").chain(self.item_ids.iter().map(String::as_str)))
            .map_err(csv_err)?;
        for (m, model) in self.model_ids.iter().enumerate() {
            let cells = self.row(m).iter().map(|v| match v {
                None => "",
                Some(false) => "0",
                Some(true) => "1",
            });
            wtr.write_record(std::iter::once(model.as_str()).chain(cells)).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| DataError::Csv(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Loads and validates a response matrix file.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<ResponseMatrix, DataError> {
    ResponseMatrix::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let m = ResponseMatrix::read_csv("model_id,i1,i2\nm1,1,0\nm2,0,1\n".as_bytes()).unwrap();
        assert_eq!(m.n_models(), 2);
        assert_eq!(m.n_items(), 2);
        assert_eq!(m.get(0, 0), Some(true));
        assert_eq!(m.get(1, 0), Some(false));
    }

    #[test]
    fn missing_cells() {
        let m = ResponseMatrix::read_csv("model_id,i1,i2\nm1,,0\n".as_bytes()).unwrap();
        assert_eq!(m.get(0, 0), None);
        assert!(!m.is_complete());
    }

    #[test]
    fn non_binary_cell_is_located() {
        let err = ResponseMatrix::read_csv("model_id,i1,i2\nm1,1,0\nm2,2,1\n".as_bytes()).unwrap_err();
        match err {
            DataError::Cell { line, model, item, value } => {
                assert_eq!((line, model.as_str(), item.as_str(), value.as_str()), (3, "m2", "i1", "2"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn header_and_duplicates() {
        assert!(matches!(ResponseMatrix::read_csv("id,i1\nm,1\n".as_bytes()), Err(DataError::Header(_))));
        assert!(matches!(
            ResponseMatrix::read_csv("model_id,i1,i1\nm,1,1\n".as_bytes()),
            Err(DataError::DuplicateId { kind: "item", .. })
        ));
        assert!(matches!(
            ResponseMatrix::read_csv("model_id,i1\nm,1\nm,0\n".as_bytes()),
            Err(DataError::DuplicateId { kind: "model", .. })
        ));
        assert!(matches!(
            ResponseMatrix::read_csv("model_id,i1\nm,1,0\n".as_bytes()),
            Err(DataError::RowLength { line: 2, .. })
        ));
    }

    #[test]
    fn round_trip_with_missing() {
        let m = ResponseMatrix::new(
            vec!["a".into(), "b,c".into()],
            vec!["x".into(), "y".into(), "z".into()],
            vec![Some(true), None, Some(false), Some(false), Some(true), None],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(ResponseMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }
}
