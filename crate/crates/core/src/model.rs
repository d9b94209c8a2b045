//! Exponential-family models on binary response vectors and the dataset container.
//!
//! A model is described by its sufficient statistic `T(x, y)`; the unnormalized
//! log-density is always the inner product `θ′T(x, y)`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{dot, logistic, Scalar};

/// Widest response vector a [`Response`] can hold.
pub const MAX_RESPONSE_DIM: usize = 64;

/// A binary response `y ∈ {0,1}^d`, packed with site 0 in the least significant bit.
///
/// The packed value doubles as the state index used by every enumeration in
/// the crate, so enumeration order is binary counting with the first site
/// varying fastest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Response(pub u64);

impl Response {
    pub const ZERO: Response = Response(0);

    #[inline]
    pub fn get(self, site: usize) -> bool {
        (self.0 >> site) & 1 == 1
    }

    #[inline]
    pub fn with(self, site: usize, value: bool) -> Self {
        if value {
            Response(self.0 | (1 << site))
        } else {
            Response(self.0 & !(1 << site))
        }
    }

    /// Value of site `site` as 0/1 scalar.
    #[inline]
    pub fn bit<T: Scalar>(self, site: usize) -> T {
        if self.get(site) {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        bits.iter()
            .enumerate()
            .fold(Response::ZERO, |r, (s, &b)| r.with(s, b))
    }

    pub fn to_bits(self, d: usize) -> Vec<bool> {
        (0..d).map(|s| self.get(s)).collect()
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// `true` when no bit at or above `d` is set.
    pub fn fits(self, d: usize) -> bool {
        d >= 64 || self.0 >> d == 0
    }
}

/// An exponential family `p(y|x,θ) ∝ exp(θ′T(x,y))` on `{0,1}^d` with covariates in `ℝ^l`.
pub trait ModelFamily<T: Scalar>: Send + Sync {
    /// Dimension `p` of the parameter.
    fn param_dim(&self) -> usize;

    /// Length `d` of the binary response.
    fn response_dim(&self) -> usize;

    /// Length `l` of the covariate vector.
    fn covariate_dim(&self) -> usize;

    /// Writes `T(x, y)` into `out`. Dimensions are not checked.
    fn suff_stat_into(&self, x: &[T], y: Response, out: &mut [T]);

    /// `θ′T(x, y)` without dimension checks.
    ///
    /// Implementations must agree with the inner product of `theta` and
    /// [`ModelFamily::suff_stat_into`].
    fn log_f(&self, x: &[T], y: Response, theta: &[T]) -> T {
        let mut t = vec![T::zero(); self.param_dim()];
        self.suff_stat_into(x, y, &mut t);
        dot(theta, &t)
    }

    /// Conditional log-odds of `y(site) = 1` given the remaining sites.
    fn log_odds(&self, x: &[T], y: Response, theta: &[T], site: usize) -> T {
        self.log_f(x, y.with(site, true), theta) - self.log_f(x, y.with(site, false), theta)
    }

    /// Checked sufficient statistic.
    fn suff_stat(&self, x: &[T], y: Response) -> Result<Vec<T>> {
        check_xy(self, x, y)?;
        let mut out = vec![T::zero(); self.param_dim()];
        self.suff_stat_into(x, y, &mut out);
        Ok(out)
    }

    /// Checked unnormalized log-density `θ′T(x, y)`.
    fn unnorm_logf(&self, x: &[T], y: Response, theta: &[T]) -> Result<T> {
        check_xy(self, x, y)?;
        check_theta(self, theta)?;
        Ok(self.log_f(x, y, theta))
    }

    /// Checked `P(y(site) = 1 | rest)`.
    fn full_conditional(&self, theta: &[T], x: &[T], y: Response, site: usize) -> Result<T> {
        check_xy(self, x, y)?;
        check_theta(self, theta)?;
        if site >= self.response_dim() {
            return Err(Error::SiteOutOfRange {
                site,
                d: self.response_dim(),
            });
        }
        Ok(logistic(self.log_odds(x, y, theta, site)))
    }
}

pub(crate) fn check_theta<T: Scalar, M: ModelFamily<T> + ?Sized>(model: &M, theta: &[T]) -> Result<()> {
    if theta.len() != model.param_dim() {
        return Err(Error::Dimension {
            arg: "theta",
            expected: model.param_dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_x<T: Scalar, M: ModelFamily<T> + ?Sized>(model: &M, x: &[T]) -> Result<()> {
    if x.len() != model.covariate_dim() {
        return Err(Error::Dimension {
            arg: "x",
            expected: model.covariate_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_xy<T: Scalar, M: ModelFamily<T> + ?Sized>(model: &M, x: &[T], y: Response) -> Result<()> {
    check_x(model, x)?;
    let d = model.response_dim();
    if !y.fits(d) {
        return Err(Error::Dimension {
            arg: "y",
            expected: d,
            found: 64 - y.0.leading_zeros() as usize,
        });
    }
    Ok(())
}

/// Covariate vectors `x_1..x_n`, each of length `l`, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates<T> {
    l: usize,
    values: Vec<T>,
    n: usize,
}

impl<T: Scalar> Covariates<T> {
    pub fn new(l: usize, rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * l);
        for row in &rows {
            if row.len() != l {
                return Err(Error::Dimension {
                    arg: "covariates",
                    expected: l,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { l, values, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.l
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[T] {
        &self.values[i * self.l..(i + 1) * self.l]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.n).map(move |i| self.get(i))
    }

    /// Componentwise mean; the zero vector for an empty set.
    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.l];
        for x in self.iter() {
            for (a, &b) in m.iter_mut().zip(x) {
                *a += b;
            }
        }
        if self.n > 0 {
            let nn = T::of_usize(self.n);
            m.iter_mut().for_each(|a| *a /= nn);
        }
        m
    }
}

/// Observed pairs `(Y_i, X_i)`, `i = 1..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    d: usize,
    responses: Vec<Response>,
    covariates: Covariates<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(d: usize, responses: Vec<Response>, covariates: Covariates<T>) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if d == 0 || d > MAX_RESPONSE_DIM {
            return Err(Error::InvalidArgument(format!(
                "response dimension must be in 1..={MAX_RESPONSE_DIM}, got {d}"
            )));
        }
        if responses.len() != covariates.len() {
            return Err(Error::Dimension {
                arg: "covariates",
                expected: responses.len(),
                found: covariates.len(),
            });
        }
        if let Some(bad) = responses.iter().find(|y| !y.fits(d)) {
            return Err(Error::InvalidArgument(format!("response {:#b} has more than {d} sites", bad.0)));
        }
        Ok(Self {
            d,
            responses,
            covariates,
        })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn response_dim(&self) -> usize {
        self.d
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariates.dim()
    }

    pub fn response(&self, i: usize) -> Response {
        self.responses[i]
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn covariate(&self, i: usize) -> &[T] {
        self.covariates.get(i)
    }

    pub fn covariates(&self) -> &Covariates<T> {
        &self.covariates
    }

    /// Checks that the dataset dimensions match a model.
    pub fn check_model<M: ModelFamily<T> + ?Sized>(&self, model: &M) -> Result<()> {
        if self.d != model.response_dim() {
            return Err(Error::Dimension {
                arg: "dataset responses",
                expected: model.response_dim(),
                found: self.d,
            });
        }
        if self.covariate_dim() != model.covariate_dim() {
            return Err(Error::Dimension {
                arg: "dataset covariates",
                expected: model.covariate_dim(),
                found: self.covariate_dim(),
            });
        }
        Ok(())
    }

    /// Reads the CSV layout `y_1,…,y_d,x_1,…,x_l` (header required).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let (d, l) = parse_header(headers.iter(), "y_", "x_")?;
        let mut responses = Vec::new();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != d + l {
                return Err(Error::Parse {
                    line,
                    column: record.len().min(d + l) + 1,
                    message: format!("expected {} fields, found {}", d + l, record.len()),
                });
            }
            let mut y = Response::ZERO;
            for s in 0..d {
                let field = record[s].trim();
                match field {
                    "0" => {}
                    "1" => y = y.with(s, true),
                    other => {
                        return Err(Error::Parse {
                            line,
                            column: s + 1,
                            message: format!("response must be 0 or 1, found {other:?}"),
                        })
                    }
                }
            }
            let mut x = Vec::with_capacity(l);
            for j in 0..l {
                let field = record[d + j].trim();
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    column: d + j + 1,
                    message: format!("covariate is not a number: {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        column: d + j + 1,
                        message: "covariate must be finite".into(),
                    });
                }
                x.push(T::of(v));
            }
            responses.push(y);
            rows.push(x);
        }
        Dataset::new(d, responses, Covariates::new(l, rows)?)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.d)
            .map(|s| format!("y_{s}"))
            .chain((1..=self.covariate_dim()).map(|j| format!("x_{j}")))
            .collect();
        w.write_record(&header)?;
        let mut fields = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            fields.clear();
            let y = self.responses[i];
            fields.extend((0..self.d).map(|s| if y.get(s) { "1".to_string() } else { "0".to_string() }));
            fields.extend(self.covariate(i).iter().map(|v| format!("{}", v.as_f64())));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a header of the form `<a>1..<a>d,<b>1..<b>l` and returns `(d, l)`.
pub(crate) fn parse_header<'a>(
    fields: impl Iterator<Item = &'a str>,
    first: &str,
    second: &str,
) -> Result<(usize, usize)> {
    let mut d = 0;
    let mut l = 0;
    for (col, name) in fields.enumerate() {
        let name = name.trim();
        let expect_first = format!("{first}{}", d + 1);
        let expect_second = format!("{second}{}", l + 1);
        if l == 0 && name == expect_first {
            d += 1;
        } else if name == expect_second {
            l += 1;
        } else {
            return Err(Error::Parse {
                line: 1,
                column: col + 1,
                message: format!("unexpected header {name:?}, expected {expect_first:?} or {expect_second:?}"),
            });
        }
    }
    if d == 0 {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("header must start with {first}1"),
        });
    }
    Ok((d, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_bits_roundtrip() {
        let y = Response::from_bits(&[true, false, true]);
        assert_eq!(y.0, 0b101);
        assert_eq!(y.to_bits(3), vec![true, false, true]);
        assert!(y.fits(3));
        assert!(!y.fits(2));
        assert_eq!(y.with(1, true).0, 0b111);
        assert_eq!(y.with(0, false).0, 0b100);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let text = "y_1,y_2,x_1\n1,0,0.5\n0,1,-2\n";
        let data: Dataset<f64> = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.response_dim(), 2);
        assert_eq!(data.covariate_dim(), 1);
        assert_eq!(data.response(0), Response(0b01));
        assert_eq!(data.covariate(1), &[-2.0]);

        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "y_1,y_2,x_1\n1,0,0.5\n0,1,-2\n");

        let bad = "y_1,x_1\n2,0.5\n";
        match Dataset::<f64>::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
        let bad = "y_1,x_1\n1,abc\n";
        match Dataset::<f64>::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Dataset::<f64>::read_csv("x_1,y_1\n".as_bytes()).is_err());
        assert!(matches!(
            Dataset::<f64>::read_csv("y_1\n".as_bytes()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn header_without_covariates() {
        let data: Dataset<f64> = Dataset::read_csv("y_1,y_2,y_3\n1,1,0\n".as_bytes()).unwrap();
        assert_eq!((data.response_dim(), data.covariate_dim()), (3, 0));
        assert!(data.covariate(0).is_empty());
    }
}
