//! Typed client for the dissection HTTP service.

use dissect_core::artifacts::{ErrorBody, SampleDetail, SampleList, TopSamples, UnitDetail, UnitList};
use dissect_core::io::Split;
use dissect_core::report::{Axis, InferenceReport};
use reqwest::Url;
use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid server URL {0:?}")]
    InvalidUrl(String),
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {}", .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("server answered {status} with an unreadable body")]
    Status { status: u16 },
    #[error("unexpected response body: {0}")]
    Decode(#[from] serde_json::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } | ClientError::Status { status } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnitOrder {
    #[default]
    Correlation,
    Unit,
}

/// One service endpoint with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    Units { order: UnitOrder, offset: usize, limit: Option<usize> },
    Unit(usize),
    TopSamples { unit: usize, n: usize, fractured_only: bool },
    Samples { offset: usize, limit: Option<usize>, split: Split },
    Sample(String),
    Relevance { sample_id: String, top: usize, axis: Axis },
    Overlay { sample_id: String, unit: usize, axis: Axis, slice: usize, alpha: Option<f64> },
    Patch { sample_id: String, axis: Axis, slice: usize },
}

impl Route {
    pub fn url(&self, base: &Url) -> Url {
        let mut url = base.clone();
        let mut query: Vec<(&str, String)> = Vec::new();
        {
            let mut path = url.path_segments_mut().expect("base URL can hold a path");
            path.pop_if_empty().push("api");
            match self {
                Route::Units { order, offset, limit } => {
                    path.push("units");
                    let sort = match order {
                        UnitOrder::Correlation => "correlation",
                        UnitOrder::Unit => "unit",
                    };
                    query.push(("sort", sort.into()));
                    query.push(("offset", offset.to_string()));
                    query.extend(limit.map(|l| ("limit", l.to_string())));
                }
                Route::Unit(k) => {
                    path.extend(["units", &k.to_string()]);
                }
                Route::TopSamples { unit, n, fractured_only } => {
                    path.extend(["units", &unit.to_string(), "top-samples"]);
                    query.push(("n", n.to_string()));
                    query.push(("fractured", fractured_only.to_string()));
                }
                Route::Samples { offset, limit, split } => {
                    path.push("samples");
                    query.push(("split", split.to_string()));
                    query.push(("offset", offset.to_string()));
                    query.extend(limit.map(|l| ("limit", l.to_string())));
                }
                Route::Sample(id) => {
                    path.extend(["samples", id]);
                }
                Route::Relevance { sample_id, top, axis } => {
                    path.extend(["samples", sample_id, "relevance"]);
                    query.push(("top", top.to_string()));
                    query.push(("axis", axis.to_string()));
                }
                Route::Overlay { sample_id, unit, axis, slice, alpha } => {
                    path.extend(["overlays", sample_id, &unit.to_string(), axis.as_str(), &format!("{slice}.png")]);
                    query.extend(alpha.map(|a| ("alpha", a.to_string())));
                }
                Route::Patch { sample_id, axis, slice } => {
                    path.extend(["patches", sample_id, axis.as_str(), &format!("{slice}.png")]);
                }
            }
        }
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query);
        }
        url
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: Url,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self> {
        let base = Url::parse(base).map_err(|_| ClientError::InvalidUrl(base.to_string()))?;
        if base.cannot_be_a_base() {
            return Err(ClientError::InvalidUrl(base.to_string()));
        }
        Ok(Self {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn base_url(&self) -> &Url {
        &self.base
    }

    /// Raw response body; non-2xx answers become errors.
    pub async fn fetch(&self, route: &Route) -> Result<Vec<u8>> {
        let resp = self.http.get(route.url(&self.base)).send().await?;
        let status = resp.status();
        let body = resp.bytes().await?.to_vec();
        if status.is_success() {
            return Ok(body);
        }
        match serde_json::from_slice::<ErrorBody>(&body) {
            Ok(body) => Err(ClientError::Api {
                status: status.as_u16(),
                body,
            }),
            Err(_) => Err(ClientError::Status { status: status.as_u16() }),
        }
    }

    async fn json<T: DeserializeOwned>(&self, route: Route) -> Result<T> {
        Ok(serde_json::from_slice(&self.fetch(&route).await?)?)
    }

    pub async fn units(&self, order: UnitOrder, offset: usize, limit: Option<usize>) -> Result<UnitList> {
        self.json(Route::Units { order, offset, limit }).await
    }

    pub async fn unit(&self, k: usize) -> Result<UnitDetail> {
        self.json(Route::Unit(k)).await
    }

    pub async fn top_samples(&self, unit: usize, n: usize, fractured_only: bool) -> Result<TopSamples> {
        self.json(Route::TopSamples { unit, n, fractured_only }).await
    }

    pub async fn samples(&self, offset: usize, limit: Option<usize>, split: Split) -> Result<SampleList> {
        self.json(Route::Samples { offset, limit, split }).await
    }

    pub async fn sample(&self, id: &str) -> Result<SampleDetail> {
        self.json(Route::Sample(id.to_string())).await
    }

    pub async fn relevance(&self, id: &str, top: usize, axis: Axis) -> Result<InferenceReport> {
        self.json(Route::Relevance {
            sample_id: id.to_string(),
            top,
            axis,
        })
        .await
    }

    pub async fn overlay_png(&self, id: &str, unit: usize, axis: Axis, slice: usize, alpha: Option<f64>) -> Result<Vec<u8>> {
        self.fetch(&Route::Overlay {
            sample_id: id.to_string(),
            unit,
            axis,
            slice,
            alpha,
        })
        .await
    }

    pub async fn patch_png(&self, id: &str, axis: Axis, slice: usize) -> Result<Vec<u8>> {
        self.fetch(&Route::Patch {
            sample_id: id.to_string(),
            axis,
            slice,
        })
        .await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_urls() {
        let base = Url::parse("http://localhost:8080").unwrap();
        let u = Route::Units { order: UnitOrder::Correlation, offset: 0, limit: Some(10) }.url(&base);
        assert_eq!(u.as_str(), "http://localhost:8080/api/units?sort=correlation&offset=0&limit=10");
        let r = Route::Relevance { sample_id: "v 1/a".into(), top: 5, axis: Axis::Axial }.url(&base);
        assert_eq!(r.as_str(), "http://localhost:8080/api/samples/v%201%2Fa/relevance?top=5&axis=axial");
        let prefixed = Url::parse("http://h/dissect/").unwrap();
        assert_eq!(Route::Unit(3).url(&prefixed).as_str(), "http://h/dissect/api/units/3");
        let o = Route::Overlay { sample_id: "s".into(), unit: 2, axis: Axis::Sagittal, slice: 48, alpha: None }.url(&base);
        assert_eq!(o.path(), "/api/overlays/s/2/sagittal/48.png");
        assert_eq!(o.query(), None);
    }

    #[test]
    fn rejects_bad_bases() {
        assert!(Client::new("not a url").is_err());
        assert!(Client::new("mailto:x@y").is_err());
    }
}
