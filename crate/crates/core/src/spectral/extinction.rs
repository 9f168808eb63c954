use crate::error::{MleError, Result};

/// Bundled molar extinction coefficients sampled at the platform's eight
/// wavelengths from the standard compiled hemoglobin dataset.
const BUILTIN_CSV: &str = include_str!("../../assets/extinction_hemoglobin.csv");

/// Molar extinction coefficients (cm^-1 / M) for oxy- and deoxy-hemoglobin.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionTable {
    pub wavelengths_nm: Vec<f64>,
    pub eps_hbo2: Vec<f64>,
    pub eps_hb: Vec<f64>,
}

impl ExtinctionTable {
    pub fn builtin() -> Self {
        Self::from_csv_str(BUILTIN_CSV).expect("bundled extinction asset is valid")
    }

    /// Parses CSV with header `wavelength_nm,eps_hbo2,eps_hb`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let expect = ["wavelength_nm", "eps_hbo2", "eps_hb"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(MleError::Format(format!(
                "extinction CSV header must be {expect:?}, got {headers:?}"
            )));
        }
        let mut wavelengths_nm = Vec::new();
        let mut eps_hbo2 = Vec::new();
        let mut eps_hb = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| MleError::Format(format!("bad extinction row {record:?}")))
            };
            wavelengths_nm.push(parse(0)?);
            eps_hbo2.push(parse(1)?);
            eps_hb.push(parse(2)?);
        }
        let table = Self {
            wavelengths_nm,
            eps_hbo2,
            eps_hb,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.wavelengths_nm.len() < 3 {
            return Err(MleError::Configuration(
                "extinction table needs at least 3 wavelengths".into(),
            ));
        }
        if self
            .eps_hbo2
            .iter()
            .chain(self.eps_hb.iter())
            .any(|&e| !(e > 0.0) || !e.is_finite())
        {
            return Err(MleError::Configuration(
                "extinction coefficients must be strictly positive".into(),
            ));
        }
        if !self.wavelengths_nm.windows(2).all(|p| p[0] < p[1]) {
            return Err(MleError::Configuration(
                "extinction wavelengths must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Restriction of the table to exactly the cube's wavelengths, in cube
    /// order. Fails if any cube wavelength is absent.
    pub fn aligned_to(&self, wavelengths_nm: &[f64]) -> Result<Self> {
        let mut eps_hbo2 = Vec::with_capacity(wavelengths_nm.len());
        let mut eps_hb = Vec::with_capacity(wavelengths_nm.len());
        for &l in wavelengths_nm {
            let idx = self
                .wavelengths_nm
                .iter()
                .position(|&t| (t - l).abs() < 0.5)
                .ok_or_else(|| {
                    MleError::Configuration(format!("no extinction entry for {l} nm"))
                })?;
            eps_hbo2.push(self.eps_hbo2[idx]);
            eps_hb.push(self.eps_hb[idx]);
        }
        Ok(Self {
            wavelengths_nm: wavelengths_nm.to_vec(),
            eps_hbo2,
            eps_hb,
        })
    }

    pub fn len(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths_nm.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("wavelength_nm,eps_hbo2,eps_hb\n");
        for i in 0..self.len() {
            s.push_str(&format!(
                "{},{},{}\n",
                self.wavelengths_nm[i], self.eps_hbo2[i], self.eps_hb[i]
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::MLE_WAVELENGTHS_NM;

    #[test]
    fn builtin_covers_all_platform_wavelengths() {
        let t = ExtinctionTable::builtin();
        assert_eq!(t.wavelengths_nm, MLE_WAVELENGTHS_NM.to_vec());
        let aligned = t.aligned_to(&MLE_WAVELENGTHS_NM).unwrap();
        assert_eq!(aligned.len(), 8);
    }

    #[test]
    fn rejects_missing_wavelength() {
        let t = ExtinctionTable::builtin();
        assert!(t.aligned_to(&[999.0]).is_err());
    }

    #[test]
    fn rejects_nonpositive_coefficients() {
        let csv = "wavelength_nm,eps_hbo2,eps_hb\n400,1.0,-2.0\n500,1.0,1.0\n600,1.0,1.0\n";
        assert!(ExtinctionTable::from_csv_str(csv).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = ExtinctionTable::builtin();
        let back = ExtinctionTable::from_csv_str(&t.to_csv_string()).unwrap();
        assert_eq!(t, back);
    }
}
