//! LIDC reading-session XML.
//!
//! Layout handled here:
//!
//! ```text
//! LidcReadMessage
//!   ResponseHeader/{Version, SeriesInstanceUid, StudyInstanceUID}
//!   readingSession*
//!     annotationVersion
//!     unblindedReadNodule*
//!       noduleID
//!       characteristics/{subtlety, internalStructure, ..., malignancy}
//!       roi*/{imageZposition, inclusion, edgeMap*/{xCoord, yCoord}}
//! ```
//!
//! Each `unblindedReadNodule` that carries all nine characteristics is one
//! annotation. Small (< 3 mm) nodules carry no characteristics and are
//! skipped and counted, as are nodules with partial characteristic blocks.

use roxmltree::{Document, Node};

use super::{AnnotationContour, IngestError};
use crate::data_model::{BiomarkerVector, MalignancyScore};

const CHARACTERISTIC_TAGS: [&str; 8] = [
    "subtlety",
    "internalStructure",
    "calcification",
    "sphericity",
    "margin",
    "lobulation",
    "spiculation",
    "texture",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnnotation {
    pub patient_id: String,
    pub session_index: usize,
    pub nodule_id: String,
    pub biomarkers: BiomarkerVector,
    pub malignancy: MalignancyScore,
    pub contours: Vec<AnnotationContour>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub annotations: Vec<ParsedAnnotation>,
    /// Nodule annotations without a complete characteristics block.
    pub skipped: usize,
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
}

fn children<'a, 'i: 'a>(node: Node<'a, 'i>, name: &'a str) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    node.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn text_of<'a>(node: Node<'a, '_>) -> &'a str {
    node.text().map(str::trim).unwrap_or("")
}

fn invalid(doc: &Document, node: Node, what: &str) -> IngestError {
    let pos = doc.text_pos_at(node.range().start);
    IngestError::InvalidValue {
        element: node.tag_name().name().to_string(),
        line: pos.row,
        col: pos.col,
        value: format!("{what}: {:?}", text_of(node)),
    }
}

fn parse_num<T: std::str::FromStr>(doc: &Document, node: Node) -> Result<T, IngestError> {
    text_of(node)
        .parse::<T>()
        .map_err(|_| invalid(doc, node, "not a number"))
}

fn check_schema(doc: &Document) -> Result<(), IngestError> {
    let root = doc.root_element();
    let name = root.tag_name().name();
    if name != "LidcReadMessage" {
        return Err(IngestError::UnsupportedSchema(format!(
            "root element <{name}> is not <LidcReadMessage>"
        )));
    }
    if let Some(v) = child(root, "ResponseHeader").and_then(|h| child(h, "Version")) {
        let v = text_of(v);
        if !v.is_empty() && v.split('.').next() != Some("1") {
            return Err(IngestError::UnsupportedSchema(format!(
                "response header version {v}"
            )));
        }
    }
    for session in children(root, "readingSession") {
        if let Some(v) = child(session, "annotationVersion") {
            let v = text_of(v);
            if !v.is_empty() && v.split('.').next() != Some("3") {
                return Err(IngestError::UnsupportedSchema(format!(
                    "annotation version {v}"
                )));
            }
        }
    }
    Ok(())
}

fn patient_id(doc: &Document) -> String {
    let header = child(doc.root_element(), "ResponseHeader");
    ["SeriesInstanceUid", "StudyInstanceUID", "PatientID"]
        .iter()
        .find_map(|tag| {
            header
                .and_then(|h| child(h, tag))
                .map(text_of)
                .filter(|s| !s.is_empty())
        })
        .unwrap_or("unknown")
        .to_string()
}

fn parse_contour(doc: &Document, roi: Node) -> Result<Option<AnnotationContour>, IngestError> {
    let Some(z) = child(roi, "imageZposition") else {
        return Err(invalid(doc, roi, "roi without imageZposition"));
    };
    let z_position: f64 = parse_num(doc, z)?;
    let inclusion = match child(roi, "inclusion") {
        Some(n) => match text_of(n).to_ascii_uppercase().as_str() {
            "TRUE" => true,
            "FALSE" => false,
            _ => return Err(invalid(doc, n, "expected TRUE or FALSE")),
        },
        None => true,
    };
    let mut edge_points = Vec::new();
    for edge in children(roi, "edgeMap") {
        let (Some(x), Some(y)) = (child(edge, "xCoord"), child(edge, "yCoord")) else {
            return Err(invalid(doc, edge, "edgeMap missing xCoord/yCoord"));
        };
        edge_points.push((parse_num::<i64>(doc, x)?, parse_num::<i64>(doc, y)?));
    }
    if edge_points.is_empty() {
        return Ok(None);
    }
    Ok(Some(AnnotationContour {
        z_position,
        edge_points,
        inclusion,
    }))
}

/// Parses one LIDC annotation document.
pub fn parse_annotation_xml(document: &[u8]) -> Result<ParseOutcome, IngestError> {
    let text = std::str::from_utf8(document).map_err(|e| IngestError::Xml {
        line: 0,
        col: 0,
        message: format!("document is not UTF-8: {e}"),
    })?;
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        IngestError::Xml {
            line: pos.row,
            col: pos.col,
            message: e.to_string(),
        }
    })?;
    check_schema(&doc)?;
    let pid = patient_id(&doc);

    let mut out = ParseOutcome::default();
    for (session_index, session) in children(doc.root_element(), "readingSession").enumerate() {
        for nodule in children(session, "unblindedReadNodule") {
            let nodule_id = child(nodule, "noduleID")
                .map(|n| text_of(n).to_string())
                .unwrap_or_default();
            let Some(chars) = child(nodule, "characteristics") else {
                out.skipped += 1;
                continue;
            };
            let mut values = [0.0f64; 8];
            let mut complete = true;
            for (slot, tag) in values.iter_mut().zip(CHARACTERISTIC_TAGS) {
                match child(chars, tag).filter(|n| !text_of(*n).is_empty()) {
                    Some(n) => *slot = parse_num(&doc, n)?,
                    None => complete = false,
                }
            }
            let malignancy = match child(chars, "malignancy").filter(|n| !text_of(*n).is_empty()) {
                Some(n) => {
                    let v: i64 = parse_num(&doc, n)?;
                    Some(MalignancyScore::new(v).map_err(|_| invalid(&doc, n, "malignancy outside 1..5"))?)
                }
                None => None,
            };
            let (true, Some(malignancy)) = (complete, malignancy) else {
                out.skipped += 1;
                continue;
            };
            let mut contours = Vec::new();
            for roi in children(nodule, "roi") {
                if let Some(c) = parse_contour(&doc, roi)? {
                    contours.push(c);
                }
            }
            out.annotations.push(ParsedAnnotation {
                patient_id: pid.clone(),
                session_index,
                nodule_id,
                biomarkers: BiomarkerVector::from_array(values),
                malignancy,
                contours,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures {
    /// Builds a LIDC-style document. Each session is a list of nodules; a
    /// nodule is `(id, Some(characteristics incl. malignancy last), rois)`.
    pub fn lidc_doc(sessions: &[Vec<(&str, Option<[i64; 9]>, Vec<(f64, bool, Vec<(i64, i64)>)>)>]) -> String {
        let names = [
            "subtlety",
            "internalStructure",
            "calcification",
            "sphericity",
            "margin",
            "lobulation",
            "spiculation",
            "texture",
            "malignancy",
        ];
        let mut s = String::from(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<LidcReadMessage xmlns=\"http://www.nih.gov\">\n\
             <ResponseHeader><Version>1.8.1</Version><SeriesInstanceUid>1.3.6.1.4.1.14519.5.2.1.6279.6001.1</SeriesInstanceUid></ResponseHeader>\n",
        );
        for session in sessions {
            s.push_str("<readingSession><annotationVersion>3.12</annotationVersion><servicingRadiologistID>anon</servicingRadiologistID>\n");
            for (id, chars, rois) in session {
                s.push_str(&format!("<unblindedReadNodule><noduleID>{id}</noduleID>\n"));
                if let Some(c) = chars {
                    s.push_str("<characteristics>");
                    for (n, v) in names.iter().zip(c) {
                        s.push_str(&format!("<{n}>{v}</{n}>"));
                    }
                    s.push_str("</characteristics>\n");
                }
                for (z, inc, pts) in rois {
                    s.push_str(&format!(
                        "<roi><imageZposition>{z}</imageZposition><imageSOP_UID>x</imageSOP_UID><inclusion>{}</inclusion>",
                        if *inc { "TRUE" } else { "FALSE" }
                    ));
                    for (x, y) in pts {
                        s.push_str(&format!("<edgeMap><xCoord>{x}</xCoord><yCoord>{y}</yCoord></edgeMap>"));
                    }
                    s.push_str("</roi>\n");
                }
                s.push_str("</unblindedReadNodule>\n");
            }
            s.push_str("</readingSession>\n");
        }
        s.push_str("</LidcReadMessage>\n");
        s
    }

    pub fn square(x0: i64, y0: i64, side: i64) -> Vec<(i64, i64)> {
        let mut pts = Vec::new();
        for x in x0..x0 + side {
            pts.push((x, y0));
        }
        for y in y0 + 1..y0 + side {
            pts.push((x0 + side - 1, y));
        }
        for x in (x0..x0 + side - 1).rev() {
            pts.push((x, y0 + side - 1));
        }
        for y in (y0 + 1..y0 + side - 1).rev() {
            pts.push((x0, y));
        }
        pts
    }
}
