//! Device catalog, room layout and environment snapshots.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceKind {
    Query,
    Operation,
}

impl fmt::Display for InterfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterfaceKind::Query => "query",
            InterfaceKind::Operation => "operation",
        })
    }
}

/// Value domain of a parameter or query return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    Enum {
        values: Vec<String>,
    },
    Range {
        min: f64,
        max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    Text,
}

impl Domain {
    pub fn enum_value(&self, literal: &str) -> Option<&str> {
        match self {
            Domain::Enum { values } => values
                .iter()
                .find(|v| v.eq_ignore_ascii_case(literal.trim()))
                .map(String::as_str),
            _ => None,
        }
    }

    /// Whether a literal value belongs to the domain.
    pub fn admits(&self, literal: &str) -> bool {
        let literal = literal.trim();
        match self {
            Domain::Enum { .. } => self.enum_value(literal).is_some(),
            Domain::Range { min, max, .. } => literal
                .parse::<f64>()
                .is_ok_and(|v| v.is_finite() && v >= *min && v <= *max),
            Domain::Text => !literal.is_empty(),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Enum { values } => write!(f, "{{{}}}", values.join(", ")),
            Domain::Range { min, max, unit } => {
                write!(f, "[{min}..{max}]")?;
                if let Some(u) = unit {
                    write!(f, " {u}")?;
                }
                Ok(())
            }
            Domain::Text => f.write_str("text"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceInterface {
    pub name: String,
    pub kind: InterfaceKind,
    #[serde(default)]
    pub params: Vec<Param>,
    #[serde(default)]
    pub returns: Option<Domain>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub target: String,
    pub room: String,
    pub position: String,
    pub interfaces: Vec<DeviceInterface>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceCatalog {
    pub rooms: Vec<String>,
    pub devices: Vec<Device>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog schema violation at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error("duplicate target `{target}` at `{pointer}`")]
    DuplicateTarget { target: String, pointer: String },
    #[error("failed to read catalog {path}: {message}")]
    Io { path: String, message: String },
}

/// Why a lookup found nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupMiss {
    UnknownTarget,
    UnknownInterface,
    /// The device has an interface of that name, but of the other kind.
    WrongKind,
}

fn schema(pointer: String, message: impl Into<String>) -> CatalogError {
    CatalogError::Schema {
        pointer,
        message: message.into(),
    }
}

/// Turns a serde path such as `devices[2].interfaces[0].kind` into a JSON
/// pointer `/devices/2/interfaces/0/kind`.
fn json_pointer(path: &str) -> String {
    if path == "." || path.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for seg in path.split('.') {
        let mut rest = seg;
        if let Some(i) = rest.find('[') {
            if i > 0 {
                out.push('/');
                out.push_str(&rest[..i]);
            }
            rest = &rest[i..];
            while let Some(stripped) = rest.strip_prefix('[') {
                let end = stripped.find(']').unwrap_or(stripped.len());
                out.push('/');
                out.push_str(&stripped[..end]);
                rest = stripped.get(end + 1..).unwrap_or("");
            }
        } else {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

impl DeviceCatalog {
    /// Parses and checks a catalog document.
    pub fn from_json(document: &str) -> Result<Self, CatalogError> {
        let de = &mut serde_json::Deserializer::from_str(document);
        let catalog: DeviceCatalog = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(&e.path().to_string());
            schema(pointer, e.into_inner().to_string())
        })?;
        catalog.check()?;
        Ok(catalog)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|e| CatalogError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    fn check(&self) -> Result<(), CatalogError> {
        let rooms: HashSet<String> = self.rooms.iter().map(|r| r.to_lowercase()).collect();
        let mut targets = HashSet::new();
        for (d, device) in self.devices.iter().enumerate() {
            let at = |field: &str| format!("/devices/{d}/{field}");
            if device.target.trim().is_empty() {
                return Err(schema(at("target"), "target must be non-empty"));
            }
            if device.target.contains('-') {
                return Err(schema(at("target"), "target may not contain '-'"));
            }
            if !targets.insert(device.target.trim().to_lowercase()) {
                return Err(CatalogError::DuplicateTarget {
                    target: device.target.clone(),
                    pointer: at("target"),
                });
            }
            if !rooms.contains(&device.room.to_lowercase()) {
                return Err(schema(
                    at("room"),
                    format!("unknown room `{}`", device.room),
                ));
            }
            if device.interfaces.is_empty() {
                return Err(schema(
                    at("interfaces"),
                    "device needs at least one interface",
                ));
            }
            for (i, iface) in device.interfaces.iter().enumerate() {
                let at = |field: &str| format!("/devices/{d}/interfaces/{i}/{field}");
                if iface.description.trim().is_empty() {
                    return Err(schema(at("description"), "description must be non-empty"));
                }
                match iface.kind {
                    InterfaceKind::Query if iface.returns.is_none() => {
                        return Err(schema(
                            at("returns"),
                            "query interfaces must declare returns",
                        ))
                    }
                    InterfaceKind::Operation if iface.params.is_empty() => {
                        return Err(schema(
                            at("params"),
                            "operation interfaces must declare params",
                        ))
                    }
                    InterfaceKind::Operation if iface.returns.is_some() => {
                        return Err(schema(
                            at("returns"),
                            "operation interfaces have no returns",
                        ))
                    }
                    _ => {}
                }
                let dup = device.interfaces[..i]
                    .iter()
                    .any(|o| o.kind == iface.kind && o.name.eq_ignore_ascii_case(&iface.name));
                if dup {
                    return Err(schema(
                        at("name"),
                        format!("duplicate {} interface `{}`", iface.kind, iface.name),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn device(&self, target: &str) -> Option<&Device> {
        let target = target.trim();
        self.devices
            .iter()
            .find(|d| d.target.eq_ignore_ascii_case(target))
    }

    /// Finds an interface by target, name and kind. Matching ignores case.
    pub fn lookup_interface(
        &self,
        target: &str,
        interface: &str,
        kind: InterfaceKind,
    ) -> Result<(&Device, &DeviceInterface), LookupMiss> {
        let device = self.device(target).ok_or(LookupMiss::UnknownTarget)?;
        let name = interface.trim();
        let mut other_kind = false;
        for iface in &device.interfaces {
            if iface.name.eq_ignore_ascii_case(name) {
                if iface.kind == kind {
                    return Ok((device, iface));
                }
                other_kind = true;
            }
        }
        Err(if other_kind {
            LookupMiss::WrongKind
        } else {
            LookupMiss::UnknownInterface
        })
    }

    /// Devices whose target names contain `kind` (e.g. "light"), in
    /// catalog order.
    pub fn devices_of_kind(&self, kind: &str) -> Vec<&Device> {
        let kind = kind.trim().to_lowercase();
        self.devices
            .iter()
            .filter(|d| d.target.to_lowercase().contains(&kind))
            .collect()
    }

    /// The device of `kind` closest to a user position phrase: first one
    /// whose position mentions it, then one in the same room as a device
    /// that does, then the first device of that kind.
    pub fn nearest_of_kind(&self, kind: &str, user_position: Option<&str>) -> Option<&Device> {
        let candidates = self.devices_of_kind(kind);
        let position = user_position
            .map(|p| p.trim().to_lowercase())
            .filter(|p| !p.is_empty());
        if let Some(pos) = &position {
            if let Some(d) = candidates
                .iter()
                .find(|d| d.position.to_lowercase().contains(pos.as_str()))
            {
                return Some(d);
            }
            let room = self
                .devices
                .iter()
                .find(|d| d.position.to_lowercase().contains(pos.as_str()))
                .map(|d| d.room.to_lowercase())
                .or_else(|| {
                    self.rooms
                        .iter()
                        .find(|r| r.to_lowercase() == *pos)
                        .map(|r| r.to_lowercase())
                });
            if let Some(room) = room {
                if let Some(d) = candidates.iter().find(|d| d.room.to_lowercase() == room) {
                    return Some(d);
                }
            }
        }
        candidates.first().copied()
    }
}

/// Target placeholder resolved at fire time, e.g. `@nearest(light, user)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NearestTarget {
    pub kind: String,
}

impl NearestTarget {
    pub fn parse(target: &str) -> Option<Self> {
        let inner = target.trim().strip_prefix("@nearest(")?.strip_suffix(')')?;
        let (kind, anchor) = inner.split_once(',')?;
        let kind = kind.trim();
        if kind.is_empty() || !anchor.trim().eq_ignore_ascii_case("user") {
            return None;
        }
        Some(NearestTarget {
            kind: kind.to_string(),
        })
    }
}

/// Where the simulator and the validator read the user's current position.
pub const USER_POSITION_TARGET: &str = "ActivitySensor";
pub const USER_POSITION_INTERFACE: &str = "userPosition";

/// Environment state at the time of an expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    /// `HH:MM`
    pub time: String,
    pub weekday: String,
    /// Degrees Celsius.
    pub temperature: f64,
    /// Relative humidity in percent.
    pub humidity: f64,
    #[serde(default)]
    pub device_states: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for ContextSnapshot {
    fn default() -> Self {
        ContextSnapshot {
            time: "19:30".into(),
            weekday: "Friday".into(),
            temperature: 26.0,
            humidity: 55.0,
            device_states: BTreeMap::new(),
        }
    }
}

impl ContextSnapshot {
    /// `Context: time=<HH:MM weekday>, temperature=<n>C, humidity=<n>%.`
    /// followed by a `Device states:` block when any are known.
    pub fn render(&self) -> String {
        let mut out = format!(
            "Context: time={} {}, temperature={}C, humidity={}%.",
            self.time, self.weekday, self.temperature, self.humidity
        );
        let states: Vec<String> = self
            .device_states
            .iter()
            .flat_map(|(target, ifaces)| {
                ifaces
                    .iter()
                    .map(move |(iface, value)| format!("- {target} {iface} = {value}"))
            })
            .collect();
        if !states.is_empty() {
            out.push_str("\nDevice states:");
            for line in states {
                out.push('\n');
                out.push_str(&line);
            }
        }
        out
    }

    /// Device states must refer to query interfaces of the catalog.
    pub fn check_against(&self, catalog: &DeviceCatalog) -> Result<(), String> {
        for (target, ifaces) in &self.device_states {
            for iface in ifaces.keys() {
                if catalog
                    .lookup_interface(target, iface, InterfaceKind::Query)
                    .is_err()
                {
                    return Err(format!(
                        "device state {target}.{iface} is not a query interface"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioDetail {
    LayoutOnly,
    LayoutAndInterfaces,
}

/// Deterministic description of the home for prompts.
pub fn render_scenario_text(
    catalog: &DeviceCatalog,
    snapshot: Option<&ContextSnapshot>,
    detail: ScenarioDetail,
) -> String {
    let mut out = String::new();
    if catalog.rooms.is_empty() {
        out.push_str("Rooms: (none)\n");
    } else {
        let _ = writeln!(out, "Rooms: {}", catalog.rooms.join(", "));
    }
    if catalog.devices.is_empty() {
        out.push_str("Devices: (none)\n");
    } else {
        out.push_str("Devices:\n");
    }
    for device in &catalog.devices {
        let _ = writeln!(
            out,
            "- {} (room: {}; position: {})",
            device.target, device.room, device.position
        );
        if detail == ScenarioDetail::LayoutAndInterfaces {
            for iface in &device.interfaces {
                let _ = writeln!(out, "    {}", interface_line(iface));
            }
        }
    }
    if let Some(snapshot) = snapshot {
        out.push_str(&snapshot.render());
        out.push('\n');
    }
    out
}

fn interface_line(iface: &DeviceInterface) -> String {
    match iface.kind {
        InterfaceKind::Query => format!(
            "query {} -> {}: {}",
            iface.name,
            iface
                .returns
                .as_ref()
                .map(ToString::to_string)
                .unwrap_or_default(),
            iface.description
        ),
        InterfaceKind::Operation => {
            let params: Vec<String> = iface
                .params
                .iter()
                .map(|p| format!("{}: {}", p.name, p.domain))
                .collect();
            format!(
                "operation {}({}): {}",
                iface.name,
                params.join(", "),
                iface.description
            )
        }
    }
}
