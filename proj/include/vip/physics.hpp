#pragma once

// Physics inputs of the e + Cu experiment: the copper K lines and the
// shifted, Pauli-forbidden transition; the detector energy response; and
// the Ramberg-Snow budget that turns an X-ray count excess into a bound
// on the violation parameter beta^2/2.

#include <cmath>

#include "vip/errors.hpp"
#include "vip/stats.hpp"

namespace vip {

inline constexpr double kElementaryChargeC = 1.602176634e-19;  // exact SI value

// Copper K lines, keV. The forbidden transition is the 2p -> 1s decay into
// an already-filled K shell; screening by the extra electron shifts it
// about 0.3 keV below the normal K-alpha energy.
inline constexpr double kCuKAlphaKev = 8.040;
inline constexpr double kCuKBetaKev = 8.905;
inline constexpr double kCuForbiddenKev = 7.729;
inline constexpr double kKBetaToKAlphaRatio = 0.17;

// Silicon pair-creation statistics (Fano broadening of the CCD response).
inline constexpr double kSiFanoFactor = 0.115;
inline constexpr double kSiPairEnergyEv = 3.71;

struct LinePhysics {
  double kalpha_kev = kCuKAlphaKev;
  double kbeta_kev = kCuKBetaKev;
  double forbidden_kev = kCuForbiddenKev;
  double kbeta_to_kalpha_ratio = kKBetaToKAlphaRatio;

  double forbidden_shift_kev() const { return kalpha_kev - forbidden_kev; }

  void validate() const {
    if (!(forbidden_kev > 0.0) || !(kalpha_kev > 0.0) || !(kbeta_kev > 0.0))
      throw DomainError("LinePhysics: line energies must be positive");
    if (!(forbidden_kev < kalpha_kev))
      throw DomainError("LinePhysics: forbidden line must lie below K-alpha");
    if (!(kbeta_to_kalpha_ratio >= 0.0))
      throw DomainError("LinePhysics: K-beta/K-alpha ratio must be >= 0");
  }
};

inline double sigma_from_fwhm(double fwhm) { return fwhm / kFwhmPerSigma; }
inline double fwhm_from_sigma(double sigma) { return sigma * kFwhmPerSigma; }

// Energy resolution model FWHM(E)^2 = noise_term + fano_term_coeff * E,
// i.e. a constant electronic-noise floor plus Fano statistics growing
// linearly with energy. Anchored so that FWHM(e_ref) = fwhm_ref exactly.
struct ResponseModel {
  double noise_term_ev2 = 0.0;        // electronics contribution to FWHM^2
  double fano_term_coeff_ev2_per_kev = 0.0;

  // FWHM^2 contribution of pair-counting statistics: 8 ln2 * F * w * E.
  // With w in eV and E in keV this is 8 ln2 * F * w * 1000 eV^2/keV.
  static double silicon_fano_coeff() {
    return 8.0 * std::log(2.0) * kSiFanoFactor * kSiPairEnergyEv * 1000.0;
  }

  static ResponseModel from_reference(double fwhm_ref_ev = 320.0, double e_ref_kev = 8.0,
                                      double fano_coeff_ev2_per_kev = silicon_fano_coeff()) {
    if (!(fwhm_ref_ev > 0.0) || !(e_ref_kev > 0.0))
      throw DomainError("ResponseModel: reference point must be positive");
    if (!(fano_coeff_ev2_per_kev >= 0.0))
      throw DomainError("ResponseModel: Fano coefficient must be >= 0");
    ResponseModel m;
    m.fano_term_coeff_ev2_per_kev = fano_coeff_ev2_per_kev;
    m.noise_term_ev2 = fwhm_ref_ev * fwhm_ref_ev - fano_coeff_ev2_per_kev * e_ref_kev;
    if (!(m.noise_term_ev2 >= 0.0))
      throw DomainError("ResponseModel: reference FWHM below the Fano limit");
    return m;
  }

  double fwhm_ev_at(double e_kev) const {
    if (!(e_kev >= 0.0)) throw DomainError("ResponseModel: energy must be >= 0");
    return std::sqrt(noise_term_ev2 + fano_term_coeff_ev2_per_kev * e_kev);
  }

  double sigma_ev_at(double e_kev) const { return sigma_from_fwhm(fwhm_ev_at(e_kev)); }
  double sigma_kev_at(double e_kev) const { return sigma_ev_at(e_kev) / 1000.0; }
};

// Inputs of the Ramberg-Snow counting argument. Every current electron
// performs D/mu scattering events while crossing the conductor; each
// "fresh" electron-copper encounter is a chance for a forbidden radiative
// capture, a fraction `capture_radiative_fraction` of which feeds the
// K-alpha-like X-ray that the CCDs can see.
struct RSParameters {
  double current_a = 40.0;
  double duration_s = 870600.0;               // 14510 minutes of integrated data
  double strip_length_d_m = 0.088;            // copper target length along the current
  double scattering_length_mu_m = 3.9e-8;     // conduction-electron mean free path
  double capture_radiative_fraction = 0.1;    // P(capture + X-ray | new encounter)
  double detection_efficiency = 1.0;          // geometry x QE; 1.0 = idealized

  void validate() const {
    if (!(current_a > 0.0)) throw DomainError("RSParameters: current must be > 0");
    if (!(duration_s > 0.0)) throw DomainError("RSParameters: duration must be > 0");
    if (!(strip_length_d_m > 0.0)) throw DomainError("RSParameters: strip length must be > 0");
    if (!(scattering_length_mu_m > 0.0))
      throw DomainError("RSParameters: scattering length must be > 0");
    if (!(capture_radiative_fraction > 0.0 && capture_radiative_fraction <= 1.0))
      throw DomainError("RSParameters: capture fraction must be in (0,1]");
    if (!(detection_efficiency > 0.0 && detection_efficiency <= 1.0))
      throw DomainError("RSParameters: detection efficiency must be in (0,1]");
  }
};

// Copper target geometry (bookkeeping only; the count budget needs just D).
struct GeometryConfig {
  double cylinder_radius_m = 0.045;
  double foil_thickness_m = 50e-6;
  double cylinder_height_m = 0.088;
  double ccd_distance_m = 0.023;
};

// Number of distinct conduction electrons supplied by the current source
// over the measurement: N = I*T/e.
inline double n_new_electrons(double current_a, double duration_s) {
  if (!(current_a > 0.0) || !(duration_s > 0.0))
    throw DomainError("n_new_electrons: current and duration must be > 0");
  return current_a * duration_s / kElementaryChargeC;
}

// Denominator of the Ramberg-Snow bound:
//   N_new * (D/mu) * capture_fraction * efficiency.
// beta^2/2 <= observed X-ray excess / this.
inline double rs_denominator(const RSParameters& rs) {
  rs.validate();
  return n_new_electrons(rs.current_a, rs.duration_s) *
         (rs.strip_length_d_m / rs.scattering_length_mu_m) * rs.capture_radiative_fraction *
         rs.detection_efficiency;
}

}  // namespace vip
