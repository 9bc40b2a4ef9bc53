//! IPv4 CIDR parsing for the target allowlist.

use std::net::Ipv4Addr;
use std::str::FromStr;

/// An IPv4 network in `a.b.c.d/len` form; a bare address parses as `/32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cidr {
    network: u32,
    prefix_len: u8,
}

impl Cidr {
    pub fn new(addr: Ipv4Addr, prefix_len: u8) -> Result<Cidr, String> {
        if prefix_len > 32 {
            return Err(format!("prefix length {prefix_len} out of range"));
        }
        Ok(Cidr {
            network: u32::from(addr) & Self::mask(prefix_len),
            prefix_len,
        })
    }

    fn mask(prefix_len: u8) -> u32 {
        if prefix_len == 0 {
            0
        } else {
            u32::MAX << (32 - prefix_len)
        }
    }

    pub fn contains_ip(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & Self::mask(self.prefix_len) == self.network
    }

    /// True when every address of `other` lies inside `self`.
    pub fn covers(&self, other: &Cidr) -> bool {
        other.prefix_len >= self.prefix_len
            && (other.network & Self::mask(self.prefix_len)) == self.network
    }
}

impl FromStr for Cidr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (addr_part, len_part) = match s.split_once('/') {
            Some((a, l)) => (a, Some(l)),
            None => (s, None),
        };
        let addr: Ipv4Addr = addr_part
            .parse()
            .map_err(|e| format!("bad address in {s:?}: {e}"))?;
        let prefix_len: u8 = match len_part {
            Some(l) => l.parse().map_err(|e| format!("bad prefix in {s:?}: {e}"))?,
            None => 32,
        };
        Cidr::new(addr, prefix_len)
    }
}

impl std::fmt::Display for Cidr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.network), self.prefix_len)
    }
}

/// Parses an allowlist file: one CIDR per line, `#` comments and blanks
/// ignored.
pub fn load_allowlist(path: &std::path::Path) -> Result<Vec<Cidr>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse::<Cidr>()
                .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// True when the target (an address or a subnet) is fully inside at least one
/// allowlist entry.
pub fn target_allowed(target: &str, allowlist: &[Cidr]) -> Result<bool, String> {
    let target: Cidr = target.parse()?;
    Ok(allowlist.iter().any(|a| a.covers(&target)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_ip_is_slash_32() {
        let c: Cidr = "10.0.0.5".parse().unwrap();
        assert_eq!(c.to_string(), "10.0.0.5/32");
        assert!(c.contains_ip("10.0.0.5".parse().unwrap()));
        assert!(!c.contains_ip("10.0.0.6".parse().unwrap()));
    }

    #[test]
    fn network_bits_are_masked() {
        let c: Cidr = "10.10.3.7/24".parse().unwrap();
        assert_eq!(c.to_string(), "10.10.3.0/24");
        assert!(c.contains_ip("10.10.3.255".parse().unwrap()));
        assert!(!c.contains_ip("10.10.4.0".parse().unwrap()));
    }

    #[test]
    fn slash_zero_contains_everything() {
        let c: Cidr = "0.0.0.0/0".parse().unwrap();
        assert!(c.contains_ip("255.255.255.255".parse().unwrap()));
        assert!(c.covers(&"192.168.1.0/24".parse().unwrap()));
    }

    #[test]
    fn covers_requires_full_containment() {
        let allow: Cidr = "10.10.0.0/16".parse().unwrap();
        assert!(allow.covers(&"10.10.5.0/24".parse().unwrap()));
        assert!(allow.covers(&"10.10.0.1/32".parse().unwrap()));
        assert!(!allow.covers(&"10.0.0.0/8".parse().unwrap()));
        assert!(!allow.covers(&"10.11.0.0/24".parse().unwrap()));
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!("300.1.1.1".parse::<Cidr>().is_err());
        assert!("10.0.0.0/33".parse::<Cidr>().is_err());
        assert!("10.0.0.0/x".parse::<Cidr>().is_err());
        assert!("not-an-ip".parse::<Cidr>().is_err());
    }

    #[test]
    fn target_check_accepts_subnets_within_allowlist() {
        let allow = vec!["127.0.0.0/8".parse().unwrap(), "10.10.0.0/16".parse().unwrap()];
        assert!(target_allowed("127.0.0.1", &allow).unwrap());
        assert!(target_allowed("10.10.3.0/24", &allow).unwrap());
        assert!(!target_allowed("192.168.0.1", &allow).unwrap());
        assert!(!target_allowed("10.0.0.0/8", &allow).unwrap());
    }

    #[test]
    fn allowlist_file_parsing_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("allow.txt");
        std::fs::write(&path, "# lab nets\n127.0.0.0/8\n\n10.10.0.0/16 # staging\n").unwrap();
        let list = load_allowlist(&path).unwrap();
        assert_eq!(list.len(), 2);
    }
}
