use std::io::{Read, Seek, SeekFrom};

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};

use m2lads_core::store::MediaRead;

use crate::{blocking, ApiError, AppState};

const CHUNK: usize = 64 * 1024;

/// Inclusive byte range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ByteRange {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum RangeSpec {
    Full,
    Partial(ByteRange),
    Unsatisfiable,
}

/// Parses a single-range `Range` header against a resource of `len` bytes.
/// Multi-range and malformed headers fall back to the full body.
pub(crate) fn parse_range(header: Option<&str>, len: u64) -> RangeSpec {
    let Some(spec) = header.and_then(|h| h.trim().strip_prefix("bytes=")) else {
        return RangeSpec::Full;
    };
    if spec.contains(',') {
        return RangeSpec::Full;
    }
    let Some((a, b)) = spec.trim().split_once('-') else {
        return RangeSpec::Full;
    };
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() {
        let Ok(suffix) = b.parse::<u64>() else {
            return RangeSpec::Full;
        };
        if suffix == 0 || len == 0 {
            return RangeSpec::Unsatisfiable;
        }
        let start = len.saturating_sub(suffix);
        return RangeSpec::Partial(ByteRange { start, end: len - 1 });
    }
    let Ok(start) = a.parse::<u64>() else {
        return RangeSpec::Full;
    };
    let end = if b.is_empty() {
        len.saturating_sub(1)
    } else {
        match b.parse::<u64>() {
            Ok(e) if e >= start => e.min(len.saturating_sub(1)),
            _ => return RangeSpec::Full,
        }
    };
    if start >= len {
        return RangeSpec::Unsatisfiable;
    }
    RangeSpec::Partial(ByteRange { start, end })
}

pub(crate) async fn serve_media(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let range_header = headers
        .get(header::RANGE)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    let stream = blocking(move || Ok(state.store.open_media(&id, &name)?)).await?;
    let len = stream.media.byte_size;
    let mime = mime_guess::from_path(&stream.media.name).first_or_octet_stream();

    let (status, range) = match parse_range(range_header.as_deref(), len) {
        RangeSpec::Unsatisfiable => return Err(ApiError::RangeNotSatisfiable(len)),
        RangeSpec::Full => (StatusCode::OK, None),
        RangeSpec::Partial(r) => (StatusCode::PARTIAL_CONTENT, Some(r)),
    };
    let (start, count) = match range {
        Some(r) => (r.start, r.end - r.start + 1),
        None => (0, len),
    };

    let mut reader = stream.reader;
    if start > 0 {
        reader = blocking(move || {
            reader
                .seek(SeekFrom::Start(start))
                .map_err(|e| ApiError::Internal(e.to_string()))?;
            Ok(reader)
        })
        .await?;
    }
    let body = Body::from_stream(chunks(reader, count));

    let mut response = (status, body).into_response();
    let h = response.headers_mut();
    h.insert(
        header::CONTENT_TYPE,
        mime.as_ref().parse().expect("mime is a valid header"),
    );
    h.insert(header::ACCEPT_RANGES, "bytes".parse().expect("static header"));
    h.insert(header::CONTENT_LENGTH, count.into());
    if let Some(r) = range {
        let value = format!("bytes {}-{}/{len}", r.start, r.end);
        h.insert(header::CONTENT_RANGE, value.parse().expect("ascii header"));
    }
    Ok(response)
}

/// Streams `count` bytes from `reader`, reading each chunk on the blocking pool.
fn chunks(
    reader: Box<dyn MediaRead>,
    count: u64,
) -> impl futures_util::Stream<Item = Result<Bytes, std::io::Error>> + Send {
    futures_util::stream::unfold(Some((reader, count)), |state| async move {
        let (mut reader, remaining) = state?;
        if remaining == 0 {
            return None;
        }
        let want = remaining.min(CHUNK as u64) as usize;
        let read = tokio::task::spawn_blocking(move || {
            let mut buf = vec![0u8; want];
            let mut filled = 0;
            while filled < want {
                match reader.read(&mut buf[filled..]) {
                    Ok(0) => break,
                    Ok(n) => filled += n,
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                    Err(e) => return Err(e),
                }
            }
            if filled < want {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "media shorter than recorded size",
                ));
            }
            Ok((reader, buf))
        })
        .await;
        match read {
            Ok(Ok((reader, buf))) => Some((Ok(Bytes::from(buf)), Some((reader, remaining - want as u64)))),
            Ok(Err(e)) => Some((Err(e), None)),
            Err(e) => Some((Err(std::io::Error::other(e)), None)),
        }
    })
}
