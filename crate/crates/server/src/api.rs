use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use choroid_core::gpet::{trace_scan_boundary, BoundaryInput, GpetConfig, GpetOverrides, TraceResult, DEFAULT_SEED};
use choroid_core::measure::{measure_roi, Alignment, RoiSpec, DEFAULT_TANGENT_OFFSET};
use choroid_core::mmcq::{segment_with, VesselSettings};
use choroid_core::preprocess::{edge_map, EdgeTarget};
use choroid_core::{io, region_from_traces, BScan, BoundaryKind, BoundaryTrace, Eye, PixelPoint, RegionMask, VesselMask};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

use crate::error::{ApiError, ApiResult};
use crate::session::Session;
use crate::AppState;

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid(format!("malformed request body: {e}")))
}

fn json_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn json_value<T: Serialize>(value: &T) -> ApiResult<Response> {
    Ok(json_response(io::to_json_bytes(value)?))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> choroid_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Worker(e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Upper,
    Lower,
}

impl Target {
    fn kind(self) -> BoundaryKind {
        match self {
            Target::Upper => BoundaryKind::RpeChoroid,
            Target::Lower => BoundaryKind::ChoroidSclera,
        }
    }
}

/// GPET configuration for one boundary of a `rows` × `cols` scan.
pub fn trace_config(
    shape: (usize, usize),
    kind: BoundaryKind,
    overrides: &GpetOverrides,
    seed: Option<u64>,
) -> choroid_core::Result<GpetConfig> {
    let mut config = GpetConfig::for_shape(shape.0, shape.1);
    config.seed = seed.unwrap_or(DEFAULT_SEED);
    overrides.apply(&mut config, kind)?;
    Ok(config)
}

pub async fn create_session(State(app): State<AppState>, mut form: Multipart) -> ApiResult<Response> {
    let mut png = None;
    let (mut axial, mut lateral, mut eye) = (None, None, Eye::Unknown);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::Invalid(format!("multipart: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::Invalid(format!("multipart field '{name}': {e}")))?;
        let text = || String::from_utf8_lossy(&data).trim().to_string();
        let number = |what: &str| {
            text()
                .parse::<f64>()
                .map_err(|_| ApiError::Invalid(format!("{what} must be a number")))
        };
        match name.as_str() {
            "image" => png = Some(data.to_vec()),
            "axial_scale" => axial = Some(number("axial_scale")?),
            "lateral_scale" => lateral = Some(number("lateral_scale")?),
            "eye" => eye = text().parse().map_err(ApiError::from)?,
            other => return Err(ApiError::Invalid(format!("unexpected field '{other}'"))),
        }
    }
    let png = png.ok_or_else(|| ApiError::Invalid("missing 'image' field".into()))?;
    let axial = axial.ok_or_else(|| ApiError::Invalid("missing 'axial_scale' field".into()))?;
    let lateral = lateral.ok_or_else(|| ApiError::Invalid("missing 'lateral_scale' field".into()))?;
    let pixels = io::decode_gray_png(&png)?;
    let scan = BScan::new(pixels, axial, lateral)?.with_eye(eye);
    let (height, width) = scan.shape();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mut session = Session::new(id.clone(), scan.with_id(id.clone()), png);
    session.log("create", json!({ "width": width, "height": height, "axial_scale": axial, "lateral_scale": lateral }));
    app.store.save(&session)?;
    app.store.insert(session);
    tracing::info!(session = %id, width, height, "session created");
    Ok((
        StatusCode::CREATED,
        axum::Json(json!({ "session_id": id, "width": width, "height": height })),
    )
        .into_response())
}

pub async fn get_image(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = app.store.get(&id)?;
    let s = handle.lock().await;
    Ok(png_response(s.image_png.clone()))
}

#[derive(Deserialize)]
pub struct EdgeQuery {
    target: Target,
}

pub async fn get_edgemap(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EdgeQuery>,
) -> ApiResult<Response> {
    let handle = app.store.get(&id)?;
    let pixels = handle.lock().await.scan.pixels.clone();
    let target = match q.target {
        Target::Upper => EdgeTarget::Upper,
        Target::Lower => EdgeTarget::Lower,
    };
    let png = blocking(move || io::encode_unit_map_png(&edge_map(&pixels, target)?.values)).await?;
    Ok(png_response(png))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRequest {
    pub target: Target,
    pub endpoints: [PixelPoint; 2],
    #[serde(default)]
    pub guides: Vec<PixelPoint>,
    #[serde(default)]
    pub config: GpetOverrides,
    pub seed: Option<u64>,
}

pub async fn trace(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: TraceRequest = parse_json(&body)?;
    let handle = app.store.get(&id)?;
    let mut s = handle.lock().await;
    let scan = s.scan.clone();
    let kind = req.target.kind();
    let config = trace_config(scan.shape(), kind, &req.config, req.seed)?;
    let input = BoundaryInput {
        endpoints: req.endpoints,
        guides: req.guides.clone(),
    };
    let result = blocking(move || trace_scan_boundary(&scan, &input, kind, &config)).await?;
    let (upper, lower) = match req.target {
        Target::Upper => (Some(&result), s.lower.as_ref()),
        Target::Lower => (s.upper.as_ref(), Some(&result)),
    };
    let region = match (upper, lower) {
        (Some(u), Some(l)) => Some(region_from_traces(&u.trace, &l.trace, s.scan.shape())?),
        _ => None,
    };
    let bytes = io::to_json_bytes(&result)?;
    s.log(
        "trace",
        json!({
            "target": kind,
            "endpoints": req.endpoints,
            "guides": req.guides,
            "seed": req.seed.unwrap_or(DEFAULT_SEED),
            "iterations": result.iterations,
        }),
    );
    match req.target {
        Target::Upper => s.upper = Some(result),
        Target::Lower => s.lower = Some(result),
    }
    s.region = region;
    s.vessels = None;
    app.store.save(&s)?;
    Ok(json_response(bytes))
}

pub async fn get_region(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = app.store.get(&id)?;
    let s = handle.lock().await;
    let region = s
        .region
        .as_ref()
        .ok_or_else(|| ApiError::Conflict("both boundaries must be traced first".into()))?;
    Ok(png_response(io::encode_mask_png(&region.pixels)?))
}

#[derive(Debug, Serialize)]
pub struct VesselSummary {
    pub mask_url: String,
    pub vessel_pixels: usize,
    pub region_pixels: usize,
    pub cvi_preview: f64,
}

fn summarise(mask_url: String, vessels: &VesselMask, region: &RegionMask) -> VesselSummary {
    let (v, r) = (vessels.count(), region.count());
    VesselSummary {
        mask_url,
        vessel_pixels: v,
        region_pixels: r,
        cvi_preview: if r > 0 { v as f64 / r as f64 } else { 0.0 },
    }
}

pub async fn vessels(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let settings: VesselSettings = if body.is_empty() { VesselSettings::default() } else { parse_json(&body)? };
    let handle = app.store.get(&id)?;
    let mut s = handle.lock().await;
    let region = s
        .region
        .clone()
        .ok_or_else(|| ApiError::Conflict("both boundaries must be traced before vessel segmentation".into()))?;
    let scan = s.scan.clone();
    let upper = s.upper.as_ref().map(|t| t.trace.clone());
    let settings_log = serde_json::to_value(&settings).unwrap_or_default();
    let (mask, region) = blocking(move || {
        let mask = segment_with(&scan, &region, upper.as_ref(), &settings)?;
        Ok((mask, region))
    })
    .await?;
    let summary = summarise(format!("/api/session/{id}/vessels.png"), &mask, &region);
    s.log("vessels", json!({ "settings": settings_log, "vessel_pixels": summary.vessel_pixels }));
    s.vessels = Some(mask);
    app.store.save(&s)?;
    json_value(&summary)
}

pub async fn get_vessels(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = app.store.get(&id)?;
    let s = handle.lock().await;
    let mask = s
        .vessels
        .as_ref()
        .ok_or_else(|| ApiError::Conflict("vessels have not been segmented".into()))?;
    Ok(png_response(io::encode_mask_png(&mask.pixels)?))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureRequest {
    pub fovea: PixelPoint,
    /// Full ROI width; the ROI extends half of it either side of the fovea.
    pub roi_microns: f64,
    #[serde(default)]
    pub alignment: Alignment,
    pub tangent_offset_px: Option<usize>,
}

impl MeasureRequest {
    pub fn spec(&self) -> RoiSpec {
        let mut spec = RoiSpec::new(self.fovea, self.roi_microns / 2.0).with_alignment(self.alignment);
        spec.tangent_offset_px = self.tangent_offset_px.unwrap_or(DEFAULT_TANGENT_OFFSET);
        spec
    }
}

pub async fn measure(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: MeasureRequest = parse_json(&body)?;
    let handle = app.store.get(&id)?;
    let mut s = handle.lock().await;
    let (Some(upper), Some(lower)) = (&s.upper, &s.lower) else {
        return Err(ApiError::Conflict("measurement needs both boundaries traced".into()));
    };
    let report = measure_roi(&upper.trace, &lower.trace, s.vessels.as_ref(), &s.scan, &req.spec())?;
    let bytes = io::to_json_bytes(&report)?;
    s.log("measure", json!({ "fovea": req.fovea, "roi_microns": req.roi_microns, "alignment": req.alignment }));
    if let Some(root) = app.store.persist_dir() {
        let dir = root.join(&s.id);
        std::fs::create_dir_all(&dir).map_err(choroid_core::Error::from)?;
        std::fs::write(dir.join("report.json"), &bytes).map_err(choroid_core::Error::from)?;
    }
    app.store.save(&s)?;
    Ok(json_response(bytes))
}

pub async fn get_audit(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = app.store.get(&id)?;
    let s = handle.lock().await;
    json_value(&s.audit)
}

pub async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    app.store.remove(&id)?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

fn decode_base64_png(field: &str, data: &str) -> ApiResult<Vec<u8>> {
    BASE64
        .decode(data.trim())
        .map_err(|e| ApiError::Invalid(format!("{field} is not valid base64: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryRequest {
    pub endpoints: [PixelPoint; 2],
    #[serde(default)]
    pub guides: Vec<PixelPoint>,
    #[serde(default)]
    pub config: GpetOverrides,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatelessTraceRequest {
    pub image_png_base64: String,
    pub axial_scale: f64,
    pub lateral_scale: f64,
    pub upper: Option<BoundaryRequest>,
    pub lower: Option<BoundaryRequest>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct StatelessTraceResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<TraceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<TraceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_png_base64: Option<String>,
}

pub async fn stateless_trace(body: Bytes) -> ApiResult<Response> {
    let req: StatelessTraceRequest = parse_json(&body)?;
    if req.upper.is_none() && req.lower.is_none() {
        return Err(ApiError::Invalid("request names neither boundary".into()));
    }
    let png = decode_base64_png("image_png_base64", &req.image_png_base64)?;
    let response = blocking(move || {
        let scan = BScan::new(io::decode_gray_png(&png)?, req.axial_scale, req.lateral_scale)?;
        let run = |b: &Option<BoundaryRequest>, kind| -> choroid_core::Result<Option<TraceResult>> {
            let Some(b) = b else { return Ok(None) };
            let config = trace_config(scan.shape(), kind, &b.config, req.seed)?;
            let input = BoundaryInput {
                endpoints: b.endpoints,
                guides: b.guides.clone(),
            };
            trace_scan_boundary(&scan, &input, kind, &config).map(Some)
        };
        let upper = run(&req.upper, BoundaryKind::RpeChoroid)?;
        let lower = run(&req.lower, BoundaryKind::ChoroidSclera)?;
        let region = match (&upper, &lower) {
            (Some(u), Some(l)) => {
                let mask = region_from_traces(&u.trace, &l.trace, scan.shape())?;
                Some(BASE64.encode(io::encode_mask_png(&mask.pixels)?))
            }
            _ => None,
        };
        Ok(StatelessTraceResponse {
            upper,
            lower,
            region_png_base64: region,
        })
    })
    .await?;
    json_value(&response)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatelessVesselRequest {
    pub image_png_base64: String,
    pub axial_scale: f64,
    pub lateral_scale: f64,
    pub region_png_base64: Option<String>,
    pub upper: Option<BoundaryTrace>,
    pub lower: Option<BoundaryTrace>,
    #[serde(default)]
    pub settings: VesselSettings,
}

#[derive(Debug, Serialize)]
pub struct StatelessVesselResponse {
    pub mask_png_base64: String,
    pub vessel_pixels: usize,
    pub region_pixels: usize,
    pub cvi_preview: f64,
}

pub async fn stateless_vessels(body: Bytes) -> ApiResult<Response> {
    let req: StatelessVesselRequest = parse_json(&body)?;
    let png = decode_base64_png("image_png_base64", &req.image_png_base64)?;
    let region_png = req
        .region_png_base64
        .as_deref()
        .map(|r| decode_base64_png("region_png_base64", r))
        .transpose()?;
    let response = blocking(move || {
        let scan = BScan::new(io::decode_gray_png(&png)?, req.axial_scale, req.lateral_scale)?;
        let region = match (&region_png, &req.upper, &req.lower) {
            (Some(bytes), _, _) => RegionMask::external(io::decode_mask_png(bytes)?),
            (None, Some(u), Some(l)) => region_from_traces(u, l, scan.shape())?,
            _ => {
                return Err(choroid_core::Error::invalid(
                    "supply a region mask or both boundary traces",
                ))
            }
        };
        let mask = segment_with(&scan, &region, req.upper.as_ref(), &req.settings)?;
        let summary = summarise(String::new(), &mask, &region);
        Ok(StatelessVesselResponse {
            mask_png_base64: BASE64.encode(io::encode_mask_png(&mask.pixels)?),
            vessel_pixels: summary.vessel_pixels,
            region_pixels: summary.region_pixels,
            cvi_preview: summary.cvi_preview,
        })
    })
    .await?;
    json_value(&response)
}
