//! Text-block and image positions straight from a page's content stream.
//!
//! A small interpreter over the text and graphics-state operators
//! (q Q cm BT ET Tf TL Td TD Tm T* Tj TJ ' " Do). Each new text line
//! position starts a block; show operators append to it. Positions are in
//! default user space (origin bottom-left).

use std::path::Path;

use lopdf::{Dictionary, Document, Encoding, Object, ObjectId};

use super::{AnchorError, AnchorLayout, ImageBox, TextBlock};

const MAX_FORM_DEPTH: usize = 4;
/// TJ adjustments below this (thousandths of an em) read as a word gap.
const TJ_SPACE: f32 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Matrix([f32; 6]);

impl Matrix {
    const IDENTITY: Matrix = Matrix([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    fn translate(tx: f32, ty: f32) -> Matrix {
        Matrix([1.0, 0.0, 0.0, 1.0, tx, ty])
    }

    /// `self` applied first, then `other`.
    fn then(self, other: Matrix) -> Matrix {
        let [a, b, c, d, e, f] = self.0;
        let [a2, b2, c2, d2, e2, f2] = other.0;
        Matrix([
            a * a2 + b * c2,
            a * b2 + b * d2,
            c * a2 + d * c2,
            c * b2 + d * d2,
            e * a2 + f * c2 + e2,
            e * b2 + f * d2 + f2,
        ])
    }

    fn apply(self, x: f32, y: f32) -> (f32, f32) {
        let [a, b, c, d, e, f] = self.0;
        (a * x + c * y + e, b * x + d * y + f)
    }
}

fn num(o: &Object) -> Option<f32> {
    o.as_float().ok()
}

fn nums<const N: usize>(ops: &[Object]) -> Option<[f32; N]> {
    if ops.len() < N {
        return None;
    }
    let mut out = [0.0; N];
    for (slot, o) in out.iter_mut().zip(&ops[ops.len() - N..]) {
        *slot = num(o)?;
    }
    Some(out)
}

struct Interp<'a> {
    doc: &'a Document,
    ctm: Matrix,
    stack: Vec<Matrix>,
    tm: Matrix,
    tlm: Matrix,
    leading: f32,
    font: Option<Vec<u8>>,
    blocks: Vec<TextBlock>,
    images: Vec<ImageBox>,
    open: bool,
}

impl<'a> Interp<'a> {
    fn new(doc: &'a Document) -> Self {
        Interp {
            doc,
            ctm: Matrix::IDENTITY,
            stack: Vec::new(),
            tm: Matrix::IDENTITY,
            tlm: Matrix::IDENTITY,
            leading: 0.0,
            font: None,
            blocks: Vec::new(),
            images: Vec::new(),
            open: false,
        }
    }

    fn new_line(&mut self, m: Matrix) {
        self.tlm = m;
        self.tm = m;
        self.open = false;
    }

    fn next_line(&mut self) {
        let m = Matrix::translate(0.0, -self.leading).then(self.tlm);
        self.new_line(m);
    }

    fn show(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if !self.open || self.blocks.is_empty() {
            let (x, y) = self.tm.then(self.ctm).apply(0.0, 0.0);
            self.blocks.push(TextBlock {
                x: x as f64,
                y: y as f64,
                text: String::new(),
            });
            self.open = true;
        }
        self.blocks.last_mut().expect("block just ensured").text.push_str(text);
    }

    fn decode(&self, resources: &Dictionary, bytes: &[u8]) -> String {
        let font = self.font.as_ref().and_then(|name| {
            let fonts = resources.get_deref(b"Font", self.doc).ok()?.as_dict().ok()?;
            fonts.get_deref(name, self.doc).ok()?.as_dict().ok()
        });
        let encoding: Option<Encoding> = font.and_then(|f| f.get_font_encoding(self.doc).ok());
        match encoding.and_then(|e| Document::decode_text(&e, bytes).ok()) {
            Some(s) => s,
            None => bytes.iter().map(|&b| b as char).collect(),
        }
    }

    fn run(&mut self, content: &[u8], resources: &Dictionary, depth: usize) -> Result<(), AnchorError> {
        let ops = lopdf::content::Content::decode(content)
            .map_err(|e| AnchorError::Pdf(format!("content stream: {e}")))?
            .operations;
        for op in ops {
            let args = &op.operands;
            match op.operator.as_str() {
                "q" => self.stack.push(self.ctm),
                "Q" => self.ctm = self.stack.pop().unwrap_or(Matrix::IDENTITY),
                "cm" => {
                    if let Some(m) = nums::<6>(args) {
                        self.ctm = Matrix(m).then(self.ctm);
                    }
                }
                "BT" => self.new_line(Matrix::IDENTITY),
                "ET" => self.open = false,
                "Tf" => {
                    self.font = args.first().and_then(|o| o.as_name().ok()).map(<[u8]>::to_vec);
                }
                "TL" => {
                    if let Some([l]) = nums::<1>(args) {
                        self.leading = l;
                    }
                }
                "Td" | "TD" => {
                    if let Some([tx, ty]) = nums::<2>(args) {
                        if op.operator == "TD" {
                            self.leading = -ty;
                        }
                        let m = Matrix::translate(tx, ty).then(self.tlm);
                        self.new_line(m);
                    }
                }
                "Tm" => {
                    if let Some(m) = nums::<6>(args) {
                        self.new_line(Matrix(m));
                    }
                }
                "T*" => self.next_line(),
                "Tj" | "'" | "\"" => {
                    if op.operator != "Tj" {
                        self.next_line();
                    }
                    if let Some(Object::String(bytes, _)) = args.last() {
                        let s = self.decode(resources, bytes);
                        self.show(&s);
                    }
                }
                "TJ" => {
                    if let Some(Object::Array(items)) = args.first() {
                        let mut s = String::new();
                        for item in items {
                            match item {
                                Object::String(bytes, _) => s.push_str(&self.decode(resources, bytes)),
                                o => {
                                    if num(o).is_some_and(|v| v < TJ_SPACE) && !s.ends_with(' ') {
                                        s.push(' ');
                                    }
                                }
                            }
                        }
                        self.show(&s);
                    }
                }
                "Do" => {
                    let Some(name) = args.first().and_then(|o| o.as_name().ok()) else {
                        continue;
                    };
                    self.x_object(resources, name, depth)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn x_object(&mut self, resources: &Dictionary, name: &[u8], depth: usize) -> Result<(), AnchorError> {
        let Some(stream) = resources
            .get_deref(b"XObject", self.doc)
            .ok()
            .and_then(|o| o.as_dict().ok())
            .and_then(|xo| xo.get_deref(name, self.doc).ok())
            .and_then(|o| o.as_stream().ok())
        else {
            return Ok(());
        };
        let subtype = stream.dict.get(b"Subtype").and_then(|o| o.as_name()).unwrap_or(b"");
        match subtype {
            b"Image" => {
                let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].map(|(x, y)| self.ctm.apply(x, y));
                let xs = corners.map(|c| c.0 as f64);
                let ys = corners.map(|c| c.1 as f64);
                let fold = |v: [f64; 4], f: fn(f64, f64) -> f64| v.into_iter().reduce(f).expect("four corners");
                self.images.push(ImageBox {
                    x0: fold(xs, f64::min),
                    y0: fold(ys, f64::min),
                    x1: fold(xs, f64::max),
                    y1: fold(ys, f64::max),
                });
            }
            b"Form" if depth < MAX_FORM_DEPTH => {
                let content = stream
                    .decompressed_content()
                    .unwrap_or_else(|_| stream.content.clone());
                let form_res = stream
                    .dict
                    .get_deref(b"Resources", self.doc)
                    .ok()
                    .and_then(|o| o.as_dict().ok())
                    .cloned()
                    .unwrap_or_else(|| resources.clone());
                let saved = (self.ctm, self.tm, self.tlm, self.open);
                if let Some(m) = stream.dict.get(b"Matrix").ok().and_then(|o| o.as_array().ok()).and_then(|a| nums::<6>(a)) {
                    self.ctm = Matrix(m).then(self.ctm);
                }
                self.run(&content, &form_res, depth + 1)?;
                (self.ctm, self.tm, self.tlm, self.open) = saved;
            }
            _ => {}
        }
        Ok(())
    }
}

fn media_box(doc: &Document, page_id: ObjectId) -> Option<[f32; 4]> {
    let mut node = doc.get_dictionary(page_id).ok()?;
    for _ in 0..32 {
        if let Ok(arr) = node.get_deref(b"MediaBox", doc).and_then(|o| o.as_array()) {
            return nums::<4>(arr);
        }
        let parent = node.get(b"Parent").ok()?.as_reference().ok()?;
        node = doc.get_dictionary(parent).ok()?;
    }
    None
}

fn page_resources(doc: &Document, page_id: ObjectId) -> Dictionary {
    // nearest definition of each resource category wins
    let mut merged = Dictionary::new();
    let Ok(mut node) = doc.get_dictionary(page_id) else {
        return merged;
    };
    for _ in 0..32 {
        if let Ok(res) = node.get_deref(b"Resources", doc).and_then(|o| o.as_dict()) {
            for (k, v) in res.iter() {
                if !merged.has(k) {
                    merged.set(k.clone(), v.clone());
                }
            }
        }
        match node
            .get(b"Parent")
            .and_then(|o| o.as_reference())
            .and_then(|id| doc.get_dictionary(id))
        {
            Ok(parent) => node = parent,
            Err(_) => break,
        }
    }
    merged
}

/// Extract the layout of 1-based `page` from a loaded document.
pub fn layout_from_document(doc: &Document, page: u32) -> Result<AnchorLayout, AnchorError> {
    let pages = doc.get_pages();
    let &page_id = pages
        .get(&page)
        .ok_or_else(|| AnchorError::Pdf(format!("page {page} not found ({} pages)", pages.len())))?;
    let [x0, y0, x1, y1] = media_box(doc, page_id).unwrap_or([0.0, 0.0, 612.0, 792.0]);
    let content = doc
        .get_page_content(page_id)
        .map_err(|e| AnchorError::Pdf(format!("page {page} content: {e}")))?;
    let resources = page_resources(doc, page_id);
    let mut interp = Interp::new(doc);
    interp.run(&content, &resources, 0)?;
    let text_blocks = interp
        .blocks
        .into_iter()
        .filter(|b| !b.text.trim().is_empty())
        .map(|b| TextBlock {
            x: b.x - x0 as f64,
            y: b.y - y0 as f64,
            text: b.text.trim().to_string(),
        })
        .collect();
    Ok(AnchorLayout {
        page_width: (x1 - x0).abs() as f64,
        page_height: (y1 - y0).abs() as f64,
        text_blocks,
        image_boxes: interp.images,
    })
}

pub fn layout_from_pdf(path: &Path, page: u32) -> Result<AnchorLayout, AnchorError> {
    let doc = Document::load(path).map_err(|e| AnchorError::Pdf(format!("{}: {e}", path.display())))?;
    layout_from_document(&doc, page)
}

pub fn layout_from_pdf_bytes(bytes: &[u8], page: u32) -> Result<AnchorLayout, AnchorError> {
    let doc = Document::load_mem(bytes).map_err(|e| AnchorError::Pdf(e.to_string()))?;
    layout_from_document(&doc, page)
}
